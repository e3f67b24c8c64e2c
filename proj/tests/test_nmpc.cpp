#include <doctest.h>

#include "clothlab/nmpc.hpp"
#include "fd.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace clothlab;

namespace {

NmpcConfig small_config(int horizon) {
  NmpcConfig c;
  c.horizon = horizon;
  c.model_stiffness = 0.0;
  c.model_damping = 0.0;
  return c;
}

MeshTopology two_by_two() {
  MeshOptions o;
  o.n = 2;
  o.edge_length = 0.1;
  o.stiffness = 5.0;
  o.damping = 0.02;
  o.total_mass = 0.004;
  return make_square_mesh(o);
}

}  // namespace

TEST_CASE("target pairs") {
  const MeshTopology t = make_square_mesh();
  const PairTargets diag = target_pairs(TaskKind::DiagonalFold, t);
  CHECK(diag.size() == 15u);
  bool corner = false;
  for (const PairTarget& p : diag) {
    if (p.i == 0 && p.j == 35) corner = p.l_ref == 0.0;
  }
  CHECK(corner);
  const PairTargets flat = target_pairs(TaskKind::Flatten, t);
  CHECK(flat[0].i == 0);
  CHECK(flat[0].j == 35);
  CHECK(flat[0].l_ref == doctest::Approx(std::sqrt(2.0) * 0.24));
  CHECK(target_pairs(TaskKind::AxisFold, t).size() == 18u);
}

TEST_CASE("stage loss") {
  std::vector<Vec3> x = {Vec3(0, 0, 0), Vec3(0.2, 0, 0)};
  CHECK(stage_loss(x, {{0, 1, 0.0, 1.0}}) == doctest::Approx(0.04));
  CHECK(stage_loss(x, {{0, 1, 0.2, 1.0}}) == 0.0);
  CHECK(stage_loss(x, {{0, 1, 0.05, 2.0}}) == doctest::Approx(2.0 * stage_loss(x, {{0, 1, 0.05, 1.0}})));
}

TEST_CASE("rollout at a stationary optimum") {
  const MeshTopology t = two_by_two();
  NmpcConfig c = small_config(1);
  c.model.gravity = 0.0;
  const ClothState s = flat_cloth(t, c.model);
  const PairTargets targets = {{0, 3, (s.positions[0] - s.positions[3]).norm(), 1.0}};
  const RolloutResult r = rollout_objective(s, Eigen::VectorXd::Zero(12), targets, t, c);
  CHECK(r.objective == doctest::Approx(0.0));
  CHECK(r.gradient.norm() < 1e-12);
  CHECK(r.states.size() == 2u);
}

TEST_CASE("rollout gradient matches central differences") {
  const MeshTopology t = two_by_two();
  const NmpcConfig c = small_config(2);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    ClothState s = flat_cloth(t, c.model);
    for (auto& x : s.positions) x += 0.01 * Vec3(n(rng), n(rng), n(rng));
    for (auto& v : s.velocities) v = 0.1 * Vec3(n(rng), n(rng), n(rng));
    Eigen::VectorXd u(24);
    for (auto& v : u) v = 0.05 * n(rng);
    const PairTargets targets = {{0, 3, 0.0, 1.0}, {1, 2, 0.05, 0.5}};
    const RolloutResult r = rollout_objective(s, u, targets, t, c);
    CHECK(r.objective >= 0.0);
    const Eigen::VectorXd fd = testing::numeric_gradient(
        [&](const Eigen::VectorXd& f) { return rollout_objective(s, f, targets, t, c, false).objective; },
        u, 1e-5);
    CHECK(testing::max_relative_error(r.gradient, fd) < 1e-4);
  }
}

TEST_CASE("solver") {
  const MeshTopology t = two_by_two();
  SUBCASE("already at target") {
    NmpcConfig c = small_config(3);
    c.model.gravity = 0.0;
    const ClothState s = flat_cloth(t, c.model);
    const PairTargets targets = {{0, 1, 0.1, 1.0}};
    const NmpcSolution sol = solve(s, targets, t, c);
    CHECK(sol.forces.norm() == 0.0);
    CHECK(sol.objective == doctest::Approx(0.0));
  }
  SUBCASE("stretched spring relaxes") {
    NmpcConfig c = small_config(3);
    c.model.gravity = 0.0;
    ClothState s = flat_cloth(t, c.model);
    s.positions[1].x() += 0.05;
    const PairTargets targets = {{0, 1, 0.1, 1.0}};
    const NmpcSolution sol = solve(s, targets, t, c);
    CHECK(sol.objective < sol.zero_objective);
    CHECK(sol.forces.cwiseAbs().maxCoeff() <= 10.0);
    CHECK(sol.predicted.size() == 3u);
  }
  SUBCASE("box constraint on a full cloth") {
    const MeshTopology big = make_square_mesh();
    const NmpcConfig c;
    const ClothState s = flat_cloth(big, SimParams{});
    const NmpcSolution sol = solve(s, target_pairs(TaskKind::DiagonalFold, big), big, c);
    CHECK(sol.forces.cwiseAbs().maxCoeff() <= 10.0);
    CHECK(sol.objective < sol.zero_objective);
  }
}

namespace {

// Independent recomputation of the force-to-action mapping.
Action expected_action(const NmpcSolution& sol, const ClothState& x, const StateVector& sv,
                       const MeshTopology& t) {
  std::set<int> pool;
  const int k = endpoint_count(sv.task);
  for (int e = 0; e < k; ++e) {
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < x.size(); ++i) d.push_back({(x.positions[i] - sv.endpoint(e)).squaredNorm(), i});
    std::stable_sort(d.begin(), d.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (int q = 0; q < 10; ++q) {
      pool.insert(d[q].second);
      for (int nb : t.neighbors(d[q].second)) pool.insert(nb);
    }
  }
  int best = -1;
  double fmax = 0.0;
  for (int i : pool) {
    if (sol.force(0, i).norm() > fmax) {
      fmax = sol.force(0, i).norm();
      best = i;
    }
  }
  int g = 0;
  for (int e = 1; e < k; ++e) {
    if ((x.positions[best] - sv.endpoint(e)).norm() < (x.positions[best] - sv.endpoint(g)).norm()) g = e;
  }
  Action a;
  a.grasp = g;
  a.offset = x.positions[best] - sv.endpoint(g);
  a.place = sol.predicted.front()[best];
  return a;
}

}  // namespace

TEST_CASE("force to action mapping") {
  const PlantConfig plant = default_plant();
  const MeshTopology t = make_square_mesh(plant.mesh);
  const ClothState x = flat_cloth(t, plant.sim);
  const StateVector sv = extract_state(x, t, TaskKind::DiagonalFold, plant);
  NmpcSolution sol;
  sol.horizon = 1;
  sol.particles = 36;
  sol.forces = Eigen::VectorXd::Zero(108);
  sol.predicted = {x.positions};
  sol.predicted[0][0] = Vec3(0.05, -0.05, 0.02);

  CHECK_FALSE(map_to_action(sol, x, sv, t, plant.workspace).has_value());

  sol.forces.segment<3>(0) = Vec3(1, 0, 0);
  auto a = map_to_action(sol, x, sv, t, plant.workspace);
  REQUIRE(a.has_value());
  CHECK(a->grasp == 0);
  CHECK(a->offset.norm() == 0.0);
  CHECK(a->place == sol.predicted[0][0]);

  sol.forces.setZero();
  sol.forces.segment<3>(28 * 3) = Vec3(0, 2, 0);
  a = map_to_action(sol, x, sv, t, plant.workspace);
  REQUIRE(a.has_value());
  CHECK(a->grasp == 2);
  CHECK((a->offset - (x.positions[28] - x.positions[35])).norm() < 1e-15);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ClothState y = x;
    for (auto& p : y.positions) p += 0.01 * Vec3(n(rng), n(rng), 0.0);
    const StateVector s = extract_state(y, t, TaskKind::DiagonalFold, plant);
    for (auto& v : sol.forces) v = n(rng);
    sol.predicted = {y.positions};
    const Action want = expected_action(sol, y, s, t);
    a = map_to_action(sol, y, s, t, plant.workspace);
    REQUIRE(a.has_value());
    CHECK(a->grasp == want.grasp);
    CHECK(a->offset == want.offset);
    CHECK(a->place == want.place);
  }
}

TEST_CASE("demo collection filters") {
  DemoConfig dc = DemoConfig::defaults(TaskKind::DiagonalFold);
  dc.episode.max_operations = 2;
  std::mt19937_64 rng(1);
  const DemoCollection none = collect_demos(TaskKind::DiagonalFold, 2, 0.0, 0, dc, rng);
  CHECK(none.dataset.episodes.empty());
  CHECK(none.episodes.size() == 2u);
  std::mt19937_64 rng2(1);
  const DemoCollection strict = collect_demos(TaskKind::DiagonalFold, 2, 1000.0, 10, dc, rng2);
  CHECK(strict.dataset.episodes.empty());
  std::mt19937_64 rng3(1);
  const DemoCollection open = collect_demos(TaskKind::DiagonalFold, 2, -1000.0, 10, dc, rng3);
  CHECK(open.dataset.episodes.size() == 2u);
  for (const Episode& e : open.dataset.episodes) {
    CHECK(e.back().done);
    for (const Transition& tr : e) CHECK(tr.demo);
  }
}
