#include "clothlab/tasks.hpp"

#include "clothlab/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace clothlab {

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::DiagonalFold: return "diagonal";
    case TaskKind::AxisFold: return "axis";
    case TaskKind::Flatten: return "flatten";
  }
  return "unknown";
}

TaskKind parse_task(const std::string& name) {
  if (name == "diagonal") return TaskKind::DiagonalFold;
  if (name == "axis") return TaskKind::AxisFold;
  if (name == "flatten") return TaskKind::Flatten;
  throw PreconditionError("unknown task '" + name + "' (expected diagonal, axis or flatten)");
}

int endpoint_count(TaskKind task) { return task == TaskKind::Flatten ? 8 : 4; }

int state_dim(TaskKind task) { return task == TaskKind::Flatten ? 28 : 13; }

int default_max_operations(TaskKind task) {
  switch (task) {
    case TaskKind::DiagonalFold: return 2;
    case TaskKind::AxisFold: return 4;
    case TaskKind::Flatten: return 10;
  }
  return 1;
}

bool is_fold(TaskKind task) { return task != TaskKind::Flatten; }

std::array<int, 4> corner_indices(TaskKind task, int n) {
  const int tl = 0;
  const int tr = n - 1;
  const int bl = n * n - n;
  const int br = n * n - 1;
  // Diagonal: p1/p3 opposite across the crease. Axis: p1/p2 share the top edge.
  if (task == TaskKind::DiagonalFold) return {tl, tr, br, bl};
  return {tl, tr, bl, br};
}

bool Workspace::contains(const Vec3& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

Vec3 Workspace::clamp(const Vec3& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

PlantConfig default_plant() {
  PlantConfig plant;
  plant.mesh.shear = ShearPattern::AntiDiagonal;
  plant.motion.lift_height = 0.225;
  plant.motion.record_trajectory = false;
  return plant;
}

void EpisodeConfig::validate() const {
  if (max_operations < 1) throw PreconditionError("EpisodeConfig: t_m must be >= 1");
  if (!(change_threshold > 0.0)) throw PreconditionError("EpisodeConfig: t_z must be > 0");
  if (flatten_min_displacement > flatten_max_displacement) {
    throw PreconditionError("EpisodeConfig: flatten displacement range is empty");
  }
}

EpisodeConfig default_episode(TaskKind task) {
  EpisodeConfig c;
  c.task = task;
  c.max_operations = default_max_operations(task);
  return c;
}

double area_fraction(const ClothState& state, const MeshTopology& topo, const PlantConfig& plant) {
  const Raster r = rasterize_cloth(state, topo, plant.cell_size());
  return r.covered_area() / (topo.edge_length * topo.edge_length);
}

StateVector extract_state(const ClothState& state, const MeshTopology& topo, TaskKind task,
                          const PlantConfig& plant) {
  StateVector sv;
  sv.task = task;
  sv.values.resize(state_dim(task));
  const Raster raster = rasterize_cloth(state, topo, plant.cell_size());
  const double f = raster.covered_area() / (topo.edge_length * topo.edge_length);
  if (is_fold(task)) {
    const auto corners = corner_indices(task, topo.n);
    for (int k = 0; k < 4; ++k) sv.values.segment<3>(3 * k) = state.positions[corners[k]];
  } else {
    const Contour outline = trace_outline(raster);
    const std::vector<Vec2> ends = select_endpoints(outline, 8, plant.dp_epsilon);
    const double z = plant.sim.table_height;
    for (int k = 0; k < 8; ++k) sv.values.segment<3>(3 * k) = Vec3(ends[k].x(), ends[k].y(), z);
    const Vec2 c = polygon_centroid(outline);
    sv.values.segment<3>(24) = Vec3(c.x(), c.y(), z);
  }
  sv.values[sv.values.size() - 1] = f;
  return sv;
}

namespace {

void require_fold(const StateVector& sv) {
  if (sv.values.size() != 13) {
    throw PreconditionError("fold error needs a 13-dim state vector, got " +
                            std::to_string(sv.values.size()));
  }
}

}  // namespace

double error_diagonal(const StateVector& sv, double edge_length) {
  require_fold(sv);
  const Vec3 p1 = sv.endpoint(0), p2 = sv.endpoint(1), p3 = sv.endpoint(2), p4 = sv.endpoint(3);
  return (p1 - p3).norm() + std::abs(std::numbers::sqrt2 * edge_length - (p2 - p4).norm()) +
         std::abs(sv.area_fraction() - 0.5);
}

double error_axis(const StateVector& sv, double edge_length) {
  require_fold(sv);
  const Vec3 p1 = sv.endpoint(0), p2 = sv.endpoint(1), p3 = sv.endpoint(2), p4 = sv.endpoint(3);
  return (p1 - p2).norm() + (p3 - p4).norm() + std::abs(edge_length - (p1 - p3).norm()) +
         std::abs(edge_length - (p2 - p4).norm()) + std::abs(sv.area_fraction() - 0.5);
}

double task_metric(const StateVector& sv, double edge_length) {
  switch (sv.task) {
    case TaskKind::DiagonalFold: return error_diagonal(sv, edge_length);
    case TaskKind::AxisFold: return error_axis(sv, edge_length);
    case TaskKind::Flatten: return sv.area_fraction();
  }
  return 0.0;
}

double reward(TaskKind task, double prev_metric, double cur_metric, bool done,
              double change_threshold) {
  if (is_fold(task)) {
    if (done) return -200.0 * cur_metric + 100.0;
    if (prev_metric - cur_metric > change_threshold) return 3.0;
    if (cur_metric - prev_metric > change_threshold) return -3.0;
    return 0.0;
  }
  if (done) return 200.0 * cur_metric - 100.0;
  if (cur_metric - prev_metric > change_threshold) return 3.0;
  if (prev_metric - cur_metric > change_threshold) return -3.0;
  return 0.0;
}

bool significant_progress(TaskKind task, double prev_metric, double cur_metric,
                          double change_threshold) {
  if (is_fold(task)) return prev_metric - cur_metric > change_threshold;
  return cur_metric - prev_metric > change_threshold;
}

ClothEnv::ClothEnv(const EpisodeConfig& config, const PlantConfig& plant)
    : config_(config), plant_(plant), topo_(make_square_mesh(plant.mesh)) {
  config_.validate();
  plant_.sim.validate();
  cloth_ = flat_cloth(topo_, plant_.sim);
  observe();
}

void ClothEnv::observe() {
  obs_ = extract_state(cloth_, topo_, config_.task, plant_);
  metric_ = task_metric(obs_, topo_.edge_length);
}

void ClothEnv::reset_to(const ClothState& cloth) {
  if (cloth.size() != topo_.particle_count()) {
    throw PreconditionError("cloth state size does not match topology");
  }
  cloth_ = cloth;
  ops_ = 0;
  observe();
}

void ClothEnv::reset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  if (is_fold(config_.task)) {
    const Eigen::Vector2d shift(config_.fold_translation_noise * unit(rng),
                                config_.fold_translation_noise * unit(rng));
    const double yaw = config_.fold_rotation_noise * std::numbers::pi / 180.0 * unit(rng);
    reset_to(flat_cloth(topo_, plant_.sim, shift, yaw));
    return;
  }
  ClothState s = flat_cloth(topo_, plant_.sim);
  std::uniform_int_distribution<int> pick(0, topo_.particle_count() - 1);
  std::uniform_real_distribution<double> dist(config_.flatten_min_displacement,
                                              config_.flatten_max_displacement);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < config_.flatten_init_steps; ++k) {
    const int i = pick(rng);
    const double d = dist(rng);
    const double a = angle(rng);
    const Vec3 grasp = s.positions[i];
    Vec3 place(grasp.x() + d * std::cos(a), grasp.y() + d * std::sin(a), plant_.sim.table_height);
    place = plant_.workspace.clamp(place);
    s = execute_pick_place(s, grasp, place, topo_, plant_.sim, plant_.motion).final_state;
  }
  reset_to(s);
}

void ClothEnv::validate_action(const Action& action) const {
  const int k = endpoint_count(config_.task);
  if (action.grasp < 0 || action.grasp >= k) {
    throw RejectedActionError("grasp index " + std::to_string(action.grasp) + " outside [0, " +
                              std::to_string(k) + ")");
  }
  const double bound = topo_.edge_length / 2.0 + 1e-12;
  if (!action.offset.allFinite() || action.offset.cwiseAbs().maxCoeff() > bound) {
    std::ostringstream msg;
    msg << "offset (" << action.offset.transpose() << ") exceeds +/-" << topo_.edge_length / 2.0;
    throw RejectedActionError(msg.str());
  }
  if (!action.place.allFinite() || !plant_.workspace.contains(action.place)) {
    std::ostringstream msg;
    msg << "placement point (" << action.place.transpose() << ") outside the workspace";
    throw RejectedActionError(msg.str());
  }
}

StepResult ClothEnv::apply_action(const Action& action) {
  validate_action(action);
  if (done()) throw PreconditionError("apply_action on a finished episode");
  const Vec3 grasp = obs_.endpoint(action.grasp) + action.offset;
  StepResult out;
  const double prev = metric_;
  try {
    cloth_ = execute_pick_place(cloth_, grasp, action.place, topo_, plant_.sim, plant_.motion)
                 .final_state;
    observe();
  } catch (const GraspMissError&) {
    out.grasp_missed = true;
  }
  ++ops_;
  out.state = obs_;
  out.done = done();
  out.reward = reward(config_.task, prev, metric_, out.done, config_.change_threshold);
  return out;
}

ClothEnv init_episode(const EpisodeConfig& config, std::mt19937_64& rng,
                      const PlantConfig& plant) {
  ClothEnv env(config, plant);
  env.reset(rng);
  return env;
}

}  // namespace clothlab
