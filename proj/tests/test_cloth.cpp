#include <doctest.h>

#include "clothlab/cloth.hpp"
#include "clothlab/errors.hpp"

#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace clothlab;

namespace {

// Topology with the given particle count (n*n must match) and explicit springs.
MeshTopology custom_topology(int n, double mass, double damping, std::vector<Spring> springs) {
  MeshTopology t;
  t.n = n;
  t.edge_length = 1.0;
  t.damping = damping;
  t.particle_mass = mass;
  t.spring_ids.resize(static_cast<std::size_t>(n * n));
  for (std::size_t id = 0; id < springs.size(); ++id) {
    t.spring_ids[springs[id].i].push_back(static_cast<int>(id));
    t.spring_ids[springs[id].j].push_back(static_cast<int>(id));
  }
  t.springs = std::move(springs);
  return t;
}

SimParams no_gravity() {
  SimParams p;
  p.gravity = 0.0;
  p.enable_table = false;
  return p;
}

}  // namespace

TEST_CASE("mesh topology invariants") {
  for (auto shear : {ShearPattern::None, ShearPattern::AntiDiagonal, ShearPattern::Both}) {
    MeshOptions o;
    o.shear = shear;
    const MeshTopology t = make_square_mesh(o);
    CHECK(t.particle_count() == 36);
    std::set<std::pair<int, int>> seen;
    const double l = 0.24 / 5.0;
    for (const Spring& s : t.springs) {
      CHECK(s.i != s.j);
      CHECK(s.i >= 0);
      CHECK(s.j < 36);
      CHECK(seen.insert({std::min(s.i, s.j), std::max(s.i, s.j)}).second);
      const bool structural = std::abs(s.rest_length - l) < 1e-12;
      const bool diagonal = std::abs(s.rest_length - std::sqrt(2.0) * l) < 1e-12;
      CHECK((structural || diagonal));
    }
    for (int i = 0; i < 36; ++i) {
      for (int j : t.neighbors(i)) {
        const auto back = t.neighbors(j);
        CHECK(std::find(back.begin(), back.end(), i) != back.end());
      }
    }
  }
  const MeshTopology plain = make_square_mesh();
  CHECK(plain.springs.size() == 60u);
  MeshOptions both;
  both.shear = ShearPattern::Both;
  CHECK(make_square_mesh(both).springs.size() == 110u);
}

TEST_CASE("row-major numbering, row 0 on top") {
  const MeshTopology t = make_square_mesh();
  const ClothState s = flat_cloth(t, SimParams{});
  CHECK(s.positions[0].x() == doctest::Approx(-0.12));
  CHECK(s.positions[0].y() == doctest::Approx(0.12));
  CHECK(s.positions[5].x() == doctest::Approx(0.12));
  CHECK(s.positions[35].y() == doctest::Approx(-0.12));
  CHECK(t.index(1, 2) == 8);
}

TEST_CASE("mesh options are validated") {
  MeshOptions o;
  o.n = 1;
  CHECK_THROWS_AS(make_square_mesh(o), PreconditionError);
  o = MeshOptions{};
  o.total_mass = 0.0;
  CHECK_THROWS_AS(make_square_mesh(o), PreconditionError);
}

TEST_CASE("spring force examples") {
  MeshTopology t = custom_topology(2, 0.01, 0.0, {{0, 1, 0.1, 100.0}});
  ClothState s;
  s.positions = {Vec3(0, 0, 0), Vec3(0.2, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  s.velocities.assign(4, Vec3::Zero());
  const Vec3 f = spring_force(s, 0, 1, t);
  CHECK(f.x() == doctest::Approx(10.0));
  CHECK(f.y() == 0.0);
  CHECK(f.z() == 0.0);
  const Vec3 g = spring_force(s, 1, 0, t);
  CHECK(g == -f);

  s.positions[1] = Vec3(0.1, 0, 0);
  CHECK(spring_force(s, 0, 1, t).norm() == 0.0);

  s.positions[1] = s.positions[0];
  CHECK_THROWS_AS(spring_force(s, 0, 1, t), SingularityError);
  CHECK_THROWS_AS(spring_force(s, 0, 3, t), PreconditionError);
}

TEST_CASE("spring antisymmetry is exact on random states") {
  MeshOptions o;
  o.shear = ShearPattern::Both;
  const MeshTopology t = make_square_mesh(o);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.02);
  ClothState s = flat_cloth(t, SimParams{});
  for (auto& x : s.positions) x += Vec3(n(rng), n(rng), n(rng));
  for (const Spring& sp : t.springs) {
    CHECK(spring_force(s, sp.i, sp.j, t) == -spring_force(s, sp.j, sp.i, t));
  }
}

TEST_CASE("total force examples") {
  const MeshTopology t = make_square_mesh();
  const SimParams p = no_gravity();
  const ClothState rest = flat_cloth(t, p);
  for (const Vec3& f : total_force(rest, {}, t, p)) CHECK(f.norm() < 1e-12);

  // relative velocity (1,0,0) across one damper with c = 0.5
  const MeshTopology pair = custom_topology(2, 0.01, 0.5, {{0, 1, 1.0, 10.0}});
  ClothState s;
  s.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 5, 0), Vec3(5, 5, 0)};
  s.velocities = {Vec3(1, 0, 0), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  const auto f = total_force(s, {}, pair, p);
  CHECK(f[0].x() == doctest::Approx(-0.5));
  CHECK(f[0].y() == 0.0);
  CHECK(f[1].x() == doctest::Approx(0.5));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.03);
  ClothState r = flat_cloth(t, p);
  for (auto& x : r.positions) x += Vec3(n(rng), n(rng), n(rng));
  for (auto& v : r.velocities) v = Vec3(n(rng), n(rng), n(rng)) * 10.0;
  Vec3 sum = Vec3::Zero();
  for (const Vec3& fi : total_force(r, {}, t, p)) sum += fi;
  CHECK(sum.norm() < 1e-9);

  std::vector<Vec3> bad(3, Vec3::Zero());
  CHECK_THROWS_AS(total_force(r, bad, t, p), PreconditionError);
}

TEST_CASE("single particle Taylor steps") {
  const MeshTopology one = custom_topology(1, 0.01, 0.0, {});
  SimParams p;
  p.dt = 0.01;
  p.enable_table = false;
  ClothState s;
  s.positions = {Vec3(0, 0, 1)};
  s.velocities = {Vec3::Zero()};
  const ClothState a = step(s, {}, one, p);
  CHECK(a.positions[0].z() - 1.0 == doctest::Approx(-4.905e-4).epsilon(1e-12));
  CHECK(a.velocities[0].z() == doctest::Approx(-0.0981).epsilon(1e-12));
  CHECK(a.step == 1);

  p.gravity = 0.0;
  s.velocities = {Vec3(1, 0, 0)};
  const ClothState b = step(s, {}, one, p);
  CHECK(b.positions[0].x() == doctest::Approx(0.01).epsilon(1e-14));

  p.dt = 0.0;
  CHECK_THROWS_AS(step(s, {}, one, p), PreconditionError);
}

TEST_CASE("flat cloth on the table stays put") {
  const MeshTopology t = make_square_mesh();
  const SimParams p;
  const ClothState start = flat_cloth(t, p);
  ClothState s = start;
  for (int k = 0; k < 1000; ++k) s = step(s, {}, t, p);
  double drift = 0.0;
  for (int i = 0; i < t.particle_count(); ++i) {
    drift = std::max(drift, (s.positions[i] - start.positions[i]).norm());
  }
  CHECK(drift < 1e-3);
}

TEST_CASE("momentum is conserved without gravity or table") {
  const MeshTopology t = make_square_mesh();
  const SimParams p = no_gravity();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.01);
  ClothState s = flat_cloth(t, p);
  for (auto& x : s.positions) x += Vec3(n(rng), n(rng), n(rng));
  for (auto& v : s.velocities) v = Vec3(n(rng), n(rng), n(rng)) * 20.0;
  const Vec3 p0 = linear_momentum(s, t);
  for (int k = 0; k < 1000; ++k) s = step(s, {}, t, p);
  CHECK((linear_momentum(s, t) - p0).norm() < 1e-9);
}

TEST_CASE("settle") {
  const MeshTopology t = make_square_mesh();
  const SimParams p;
  const ClothState flat = flat_cloth(t, p);
  CHECK(settle(flat, t, p).step == 1);

  ClothState lifted = flat;
  lifted.positions[0].z() = 0.05;
  const ClothState a = settle(lifted, t, p);
  CHECK(max_speed(a) < p.settle_speed_tol);
  const ClothState b = settle(a, t, p);
  for (int i = 0; i < t.particle_count(); ++i) {
    CHECK((b.positions[i] - a.positions[i]).cwiseAbs().maxCoeff() <= p.settle_speed_tol * p.dt);
  }
}

TEST_CASE("nearest particle") {
  const MeshTopology t = make_square_mesh();
  const ClothState s = flat_cloth(t, SimParams{});
  CHECK(nearest_particle(s, s.positions[7]) == 7);
  CHECK(nearest_particle(s, 0.5 * (s.positions[2] + s.positions[3])) == 2);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 q(u(rng), u(rng), u(rng));
    int best = 0;
    for (int i = 1; i < s.size(); ++i) {
      if ((s.positions[i] - q).norm() < (s.positions[best] - q).norm()) best = i;
    }
    CHECK(nearest_particle(s, q) == best);
  }
}

TEST_CASE("pick and place") {
  const MeshTopology t = make_square_mesh();
  const SimParams p;
  MotionParams m;
  m.record_trajectory = true;
  const ClothState flat = flat_cloth(t, p);

  SUBCASE("null move") {
    const auto r = execute_pick_place(flat, flat.positions[0], flat.positions[0], t, p, m);
    for (int i = 0; i < t.particle_count(); ++i) {
      CHECK((r.final_state.positions[i] - flat.positions[i]).norm() < 1e-6);
    }
  }
  SUBCASE("corner onto opposite corner") {
    // released on arrival the cloth swings the corner about 5 mm off; holding first settles it
    m.hold_steps = 1000;
    const auto r = execute_pick_place(flat, flat.positions[0], flat.positions[35], t, p, m);
    CHECK(r.grasped == 0);
    CHECK((r.final_state.positions[0] - flat.positions[35]).norm() < 5e-3);
    CHECK(r.trajectory.size() > 100u);
    std::ostringstream out;
    write_trajectory(out, std::span<const ClothState>(r.trajectory.data(), 2));
    CHECK(out.str().substr(0, 2) == "0 ");
  }
  SUBCASE("release on arrival") {
    const auto r = execute_pick_place(flat, flat.positions[0], flat.positions[35], t, p, m);
    CHECK((r.final_state.positions[0] - flat.positions[35]).norm() < 1e-2);
  }
  SUBCASE("grasp miss") {
    m.grasp_radius = 0.05;
    CHECK_THROWS_AS(execute_pick_place(flat, Vec3(1, 1, 0), Vec3::Zero(), t, p, m), GraspMissError);
  }
}
