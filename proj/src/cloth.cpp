#include "clothlab/cloth.hpp"

#include "clothlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace clothlab {
namespace {

constexpr double kMinSpringLength = 1e-9;

// Force on the first particle of `s`. Restoring: a stretched spring pulls i toward j.
Vec3 spring_force_on_first(const Vec3& xi, const Vec3& xj, const Spring& s) {
  const Vec3 d = xi - xj;
  const double len = d.norm();
  if (len < kMinSpringLength) {
    std::ostringstream msg;
    msg << "coincident particles " << s.i << " and " << s.j << " (distance " << len << " m)";
    throw SingularityError(s.i, s.j, msg.str());
  }
  return -s.stiffness * (len - s.rest_length) / len * d;
}

void add_spring(MeshTopology& topo, int i, int j, double rest, double stiffness) {
  const int id = static_cast<int>(topo.springs.size());
  topo.springs.push_back({i, j, rest, stiffness});
  topo.spring_ids[i].push_back(id);
  topo.spring_ids[j].push_back(id);
}

struct Pin {
  int particle = -1;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

ClothState advance(const ClothState& state, std::span<const Vec3> external,
                   const MeshTopology& topo, const SimParams& params, const Pin& pin) {
  const auto forces = total_force(state, external, topo, params);
  const double dt = params.dt;
  const double inv_m = 1.0 / topo.particle_mass;
  ClothState next;
  next.step = state.step + 1;
  next.positions.resize(state.positions.size());
  next.velocities.resize(state.velocities.size());
  for (std::size_t i = 0; i < forces.size(); ++i) {
    const Vec3 a = forces[i] * inv_m;
    next.positions[i] = state.positions[i] + dt * state.velocities[i] + 0.5 * dt * dt * a;
    next.velocities[i] = state.velocities[i] + dt * a;
    if (params.enable_table && next.positions[i].z() < params.table_height) {
      next.positions[i].z() = params.table_height;
      if (next.velocities[i].z() < 0.0) next.velocities[i].z() = 0.0;
      next.velocities[i].x() *= 1.0 - params.tangential_friction;
      next.velocities[i].y() *= 1.0 - params.tangential_friction;
    }
  }
  if (pin.particle >= 0) {
    next.positions[pin.particle] = pin.position;
    next.velocities[pin.particle] = pin.velocity;
  }
  return next;
}

}  // namespace

std::vector<int> MeshTopology::neighbors(int i) const {
  std::vector<int> out;
  out.reserve(spring_ids[i].size());
  for (int id : spring_ids[i]) {
    const Spring& s = springs[id];
    out.push_back(s.i == i ? s.j : s.i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const Spring* MeshTopology::find_spring(int i, int j) const {
  if (i < 0 || i >= particle_count()) return nullptr;
  for (int id : spring_ids[i]) {
    const Spring& s = springs[id];
    if ((s.i == i && s.j == j) || (s.i == j && s.j == i)) return &s;
  }
  return nullptr;
}

MeshTopology make_square_mesh(const MeshOptions& options) {
  if (options.n < 2) throw PreconditionError("mesh needs at least 2 particles per edge");
  if (!(options.edge_length > 0.0) || !(options.stiffness >= 0.0) || !(options.shear_stiffness >= 0.0) || !(options.damping >= 0.0) ||
      !(options.total_mass > 0.0)) {
    throw PreconditionError("mesh options must be positive");
  }
  MeshTopology topo;
  topo.n = options.n;
  topo.edge_length = options.edge_length;
  topo.stiffness = options.stiffness;
  topo.damping = options.damping;
  topo.particle_mass = options.total_mass / (options.n * options.n);
  topo.spring_ids.resize(static_cast<std::size_t>(options.n * options.n));
  const double l = topo.spacing();
  const double diag = std::sqrt(2.0) * l;
  const int n = options.n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int i = topo.index(r, c);
      if (c + 1 < n) add_spring(topo, i, topo.index(r, c + 1), l, options.stiffness);
      if (r + 1 < n) add_spring(topo, i, topo.index(r + 1, c), l, options.stiffness);
      if (options.shear != ShearPattern::None && r + 1 < n) {
        if (options.shear == ShearPattern::Both && c + 1 < n) {
          add_spring(topo, i, topo.index(r + 1, c + 1), diag, options.shear_stiffness);
        }
        if (c > 0) add_spring(topo, i, topo.index(r + 1, c - 1), diag, options.shear_stiffness);
      }
    }
  }
  return topo;
}

void SimParams::validate() const {
  if (!(dt > 0.0)) throw PreconditionError("SimParams: dt must be > 0");
  if (!(settle_speed_tol > 0.0)) throw PreconditionError("SimParams: settle_speed_tol must be > 0");
  if (settle_max_steps < 0) throw PreconditionError("SimParams: settle_max_steps must be >= 0");
}

ClothState flat_cloth(const MeshTopology& topo, const SimParams& params,
                      const Eigen::Vector2d& center, double yaw) {
  ClothState s;
  const int n = topo.n;
  const double l = topo.spacing();
  const double half = topo.edge_length / 2.0;
  const double cy = std::cos(yaw);
  const double sy = std::sin(yaw);
  s.positions.reserve(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      // Row 0 is the top edge (largest y), columns grow along +x.
      const double x = -half + c * l;
      const double y = half - r * l;
      s.positions.emplace_back(center.x() + cy * x - sy * y, center.y() + sy * x + cy * y,
                               params.table_height);
    }
  }
  s.velocities.assign(s.positions.size(), Vec3::Zero());
  return s;
}

Vec3 spring_force(const ClothState& state, int i, int j, const MeshTopology& topo) {
  const Spring* s = topo.find_spring(i, j);
  if (s == nullptr) {
    throw PreconditionError("no spring between particles " + std::to_string(i) + " and " +
                            std::to_string(j));
  }
  const Spring oriented{i, j, s->rest_length, s->stiffness};
  return spring_force_on_first(state.positions[i], state.positions[j], oriented);
}

std::vector<Vec3> total_force(const ClothState& state, std::span<const Vec3> external,
                              const MeshTopology& topo, const SimParams& params) {
  const int count = topo.particle_count();
  if (state.size() != count || static_cast<int>(state.velocities.size()) != count) {
    throw PreconditionError("cloth state size does not match topology");
  }
  if (!external.empty() && static_cast<int>(external.size()) != count) {
    throw PreconditionError("external force array must have one entry per particle");
  }
  const Vec3 weight(0.0, 0.0, -topo.particle_mass * params.gravity);
  std::vector<Vec3> forces(static_cast<std::size_t>(count), weight);
  if (!external.empty()) {
    for (int i = 0; i < count; ++i) forces[i] += external[i];
  }
  for (const Spring& s : topo.springs) {
    const Vec3 f = spring_force_on_first(state.positions[s.i], state.positions[s.j], s) -
                   topo.damping * (state.velocities[s.i] - state.velocities[s.j]);
    forces[s.i] += f;
    forces[s.j] -= f;
  }
  for (int i = 0; i < count; ++i) {
    if (!forces[i].allFinite()) {
      throw IntegrationError(i, "non-finite force on particle " + std::to_string(i));
    }
  }
  return forces;
}

ClothState step(const ClothState& state, std::span<const Vec3> external, const MeshTopology& topo,
                const SimParams& params) {
  params.validate();
  return advance(state, external, topo, params, Pin{});
}

ClothState settle(const ClothState& state, const MeshTopology& topo, const SimParams& params) {
  params.validate();
  ClothState s = state;
  for (int k = 0; k < std::max(1, params.settle_max_steps); ++k) {
    s = advance(s, {}, topo, params, Pin{});
    if (max_speed(s) < params.settle_speed_tol) break;
  }
  return s;
}

int nearest_particle(const ClothState& state, const Vec3& point) {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.size(); ++i) {
    const double d2 = (state.positions[i] - point).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

PickPlaceResult execute_pick_place(const ClothState& state, const Vec3& grasp_point,
                                   const Vec3& place_point, const MeshTopology& topo,
                                   const SimParams& params, const MotionParams& motion) {
  params.validate();
  if (!(motion.max_carry_speed > 0.0)) throw PreconditionError("max_carry_speed must be > 0");
  const int grasped = nearest_particle(state, grasp_point);
  if (grasped < 0 || (state.positions[grasped] - grasp_point).norm() > motion.grasp_radius) {
    std::ostringstream msg;
    msg << "grasp miss: no particle within " << motion.grasp_radius << " m of ("
        << grasp_point.transpose() << ")";
    throw GraspMissError(msg.str());
  }

  PickPlaceResult result;
  result.grasped = grasped;
  ClothState s = state;
  if (motion.record_trajectory) result.trajectory.push_back(s);

  const Vec3 start = s.positions[grasped];
  if ((place_point - start).norm() > 1e-9) {
    const double lift_z =
        std::max({params.table_height + motion.lift_height, start.z(), place_point.z()});
    const std::vector<Vec3> waypoints = {start, Vec3(start.x(), start.y(), lift_z),
                                         Vec3(place_point.x(), place_point.y(), lift_z),
                                         place_point};
    const double max_step = motion.max_carry_speed * params.dt;
    Vec3 anchor = start;
    for (std::size_t w = 1; w < waypoints.size(); ++w) {
      while ((waypoints[w] - anchor).norm() > 0.0) {
        const Vec3 delta = waypoints[w] - anchor;
        const double dist = delta.norm();
        const Vec3 next = dist <= max_step ? waypoints[w] : Vec3(anchor + delta * (max_step / dist));
        const Pin pin{grasped, next, (next - anchor) / params.dt};
        anchor = next;
        s = advance(s, {}, topo, params, pin);
        if (motion.record_trajectory) result.trajectory.push_back(s);
      }
    }
    for (int k = 0; k < motion.hold_steps; ++k) {
      s = advance(s, {}, topo, params, Pin{grasped, place_point, Vec3::Zero()});
      if (motion.record_trajectory) result.trajectory.push_back(s);
    }
    s.velocities[grasped].setZero();
  }

  // Released: relax under gravity and table contact.
  for (int k = 0; k < std::max(1, params.settle_max_steps); ++k) {
    s = advance(s, {}, topo, params, Pin{});
    if (motion.record_trajectory) result.trajectory.push_back(s);
    if (max_speed(s) < params.settle_speed_tol) break;
  }
  result.final_state = std::move(s);
  return result;
}

double kinetic_energy(const ClothState& state, const MeshTopology& topo) {
  double e = 0.0;
  for (const Vec3& v : state.velocities) e += 0.5 * topo.particle_mass * v.squaredNorm();
  return e;
}

double potential_energy(const ClothState& state, const MeshTopology& topo,
                        const SimParams& params) {
  double e = 0.0;
  for (const Spring& s : topo.springs) {
    const double stretch = (state.positions[s.i] - state.positions[s.j]).norm() - s.rest_length;
    e += 0.5 * s.stiffness * stretch * stretch;
  }
  for (const Vec3& x : state.positions) e += topo.particle_mass * params.gravity * x.z();
  return e;
}

Vec3 linear_momentum(const ClothState& state, const MeshTopology& topo) {
  Vec3 p = Vec3::Zero();
  for (const Vec3& v : state.velocities) p += topo.particle_mass * v;
  return p;
}

double max_speed(const ClothState& state) {
  double m = 0.0;
  for (const Vec3& v : state.velocities) m = std::max(m, v.norm());
  return m;
}

void write_trajectory(std::ostream& out, std::span<const ClothState> trajectory) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(9);
  for (const ClothState& s : trajectory) {
    out << s.step;
    for (const Vec3& x : s.positions) out << ' ' << x.x() << ' ' << x.y() << ' ' << x.z();
    out << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace clothlab
