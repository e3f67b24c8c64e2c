#include <doctest.h>

#include "clothlab/agent.hpp"
#include "clothlab/errors.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <random>

using namespace clothlab;

namespace {

AgentConfig small_config(int preset_number) {
  AgentConfig c = AgentConfig::defaults(TaskKind::DiagonalFold, preset_number);
  c.hidden_layers = 2;
  c.hidden_width = 8;
  return c;
}

StateVector random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.15, 0.15);
  StateVector s;
  s.task = TaskKind::DiagonalFold;
  s.values.resize(13);
  for (int i = 0; i < 12; ++i) s.values[i] = u(rng);
  s.values[12] = 0.5 + u(rng);
  return s;
}

Transition random_transition(std::mt19937_64& rng, bool demo, bool done) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  std::uniform_int_distribution<int> g(0, 3);
  Transition t;
  t.state = random_state(rng);
  t.next_state = random_state(rng);
  t.action.grasp = g(rng);
  t.action.offset = Vec3(u(rng), u(rng), 0.0);
  t.action.place = Vec3(u(rng), u(rng), 0.1 + u(rng));
  t.reward = 30.0 * u(rng);
  t.demo = demo;
  t.done = done;
  t.nstep_return = t.reward;
  t.nstep_state = t.next_state;
  t.nstep_count = 1;
  t.nstep_done = done;
  return t;
}

// Q = c * u_place_x; the actor always outputs u = 0.
Agent linear_agent(double c) {
  std::mt19937_64 rng(1);
  Agent a = make_agent(small_config(1), default_plant(), rng);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(1, 23);
  w(0, 17 + 3) = c;
  a.critic = DenseNet({w}, {Eigen::VectorXd::Zero(1)}, OutputActivation::Linear);
  a.actor = DenseNet({Eigen::MatrixXd::Zero(6, 17)}, {Eigen::VectorXd::Zero(6)}, OutputActivation::Tanh);
  return a;
}

// Demo whose normalized action is (0, 0, 0, 0.5, 0, 0).
Transition half_x_demo(std::mt19937_64& rng) {
  Transition t = random_transition(rng, true, false);
  t.action.grasp = 0;
  t.action.offset = Vec3::Zero();
  t.action.place = Vec3(0.25, 0.0, 0.2);
  return t;
}

}  // namespace

TEST_CASE("presets") {
  CHECK(preset(1).selector == SelectorKind::Htsk);
  CHECK(preset(1).gabc);
  CHECK(preset(1).cpl);
  CHECK(preset(8).selector == SelectorKind::NeuralBC);
  CHECK_FALSE(preset(8).gabc);
  CHECK_FALSE(preset(8).cpl);
  for (int p = 1; p <= 8; ++p) {
    for (int q = p + 1; q <= 8; ++q) {
      const Preset a = preset(p), b = preset(q);
      CHECK_FALSE((a.selector == b.selector && a.gabc == b.gabc && a.cpl == b.cpl));
    }
  }
  CHECK_THROWS_AS(preset(0), PreconditionError);
  CHECK_THROWS_AS(preset(9), PreconditionError);
  CHECK(parse_selector(to_string(SelectorKind::Uniform)) == SelectorKind::Uniform);
  const AgentConfig c = AgentConfig::defaults(TaskKind::Flatten, 4);
  CHECK(c.updates_per_step == 20);
  CHECK(c.selector == SelectorKind::Random);
  CHECK(c.total_rounds() == 620);
}

TEST_CASE("network shapes follow CPL") {
  std::mt19937_64 rng(1);
  const Agent with = make_agent(small_config(1), default_plant(), rng);
  CHECK(with.actor.input_size() == 17);
  CHECK(with.critic.input_size() == 23);
  const Agent without = make_agent(small_config(8), default_plant(), rng);
  CHECK(without.actor.input_size() == 13);
  CHECK(without.selector_net.output_size() == 4);
}

TEST_CASE("actor action") {
  std::mt19937_64 rng(2);
  const Agent a = make_agent(small_config(5), default_plant(), rng);
  const StateVector s = random_state(rng);
  const Action a0 = actor_act(a, s, 1, 0.0, rng);
  const Action a1 = actor_act(a, s, 1, 0.0, rng);
  CHECK(a0.place == a1.place);
  CHECK(a0.offset == a1.offset);
  CHECK(a0.grasp == 1);
  CHECK(a0.offset.cwiseAbs().maxCoeff() <= 0.12);
  CHECK(a.scale.workspace.contains(a0.place));
  CHECK_THROWS_AS(actor_act(a, s, 4, 0.0, rng), PreconditionError);

  // the place point sits inside the box, so noise there is never clipped
  REQUIRE(a.scale.workspace.contains(a0.place + Vec3::Constant(0.06)));
  REQUIRE(a.scale.workspace.contains(a0.place - Vec3::Constant(0.06)));
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = actor_act(a, s, 1, 0.01, rng).place.x() - a0.place.x();
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 3e-4);
  CHECK(std::sqrt(sq / n - mean * mean) == doctest::Approx(0.01).epsilon(0.03));

  const Eigen::VectorXd u = a.scale.normalize(a0);
  const Action back = a.scale.denormalize(1, u);
  CHECK((back.place - a0.place).norm() < 1e-12);
  CHECK((back.offset - a0.offset).norm() < 1e-12);
}

TEST_CASE("state features") {
  std::mt19937_64 rng(3);
  const Agent a = make_agent(small_config(1), default_plant(), rng);
  const StateVector s = random_state(rng);
  const Eigen::VectorXd f = a.features(s);
  CHECK(f[12] == s.values[12]);
  const Vec3 mid = 0.5 * (a.scale.workspace.lo + a.scale.workspace.hi);
  const Vec3 half = 0.5 * (a.scale.workspace.hi - a.scale.workspace.lo);
  CHECK(f[4] == doctest::Approx((s.values[4] - mid.y()) / half.y()));
}

TEST_CASE("critic targets") {
  std::mt19937_64 rng(4);
  Agent a = make_agent(small_config(5), default_plant(), rng);
  a.target_critic2 = a.target_critic1;

  Transition end = random_transition(rng, false, true);
  Transition mid = random_transition(rng, false, false);
  const Batch batch{&end, &mid};
  const CriticTargets y = critic_targets(a, batch);
  CHECK(y.y1[0] == end.reward);
  CHECK(y.yn[0] == end.reward);

  // Uniform selector: successor value averaged over the four grasps
  double v = 0.0;
  for (int g = 0; g < 4; ++g) {
    const Eigen::VectorXd u = a.target_actor.forward(a.actor_input(mid.next_state, g));
    v += a.target_critic1.forward(a.critic_input(mid.next_state, g, u))[0];
  }
  CHECK(y.y1[1] == doctest::Approx(mid.reward + 0.99 * v / 4.0).epsilon(1e-12));
  CHECK(y.yn[1] == doctest::Approx(y.y1[1]).epsilon(1e-12));

  // a second, more pessimistic target critic takes over
  a.target_critic2 = a.target_critic1;
  Eigen::VectorXd p = a.target_critic2.flat();
  p[p.size() - 1] -= 5.0;  // output bias
  a.target_critic2.assign(p);
  const CriticTargets lower = critic_targets(a, batch);
  CHECK(lower.y1[1] == doctest::Approx(y.y1[1] - 0.99 * 5.0).epsilon(1e-12));
}

TEST_CASE("critic loss") {
  std::mt19937_64 rng(5);
  SUBCASE("perfect critic") {
    const Agent a = make_agent(small_config(1), default_plant(), rng);
    std::vector<Transition> ts;
    for (int i = 0; i < 6; ++i) ts.push_back(random_transition(rng, i % 2 == 0, false));
    Batch b;
    for (const auto& t : ts) b.push_back(&t);
    CriticTargets y;
    y.y1.resize(6);
    for (int i = 0; i < 6; ++i) y.y1[i] = a.q(ts[i].state, ts[i].action.grasp, a.scale.normalize(ts[i].action));
    y.yn = y.y1;
    const CriticLoss l = critic_loss(a, b, y, 0.0);
    CHECK(l.total == doctest::Approx(0.0));
    CHECK(l.td_error.norm() < 1e-12);
  }
  SUBCASE("margin") {
    const Transition d = half_x_demo(rng);
    const Batch b{&d};
    for (auto [c, want] : {std::pair{300.0, 0.0}, std::pair{80.0, 60.0}}) {
      const Agent a = linear_agent(c);
      CriticTargets y;
      y.y1 = Eigen::VectorXd::Constant(1, a.q(d.state, 0, a.scale.normalize(d.action)));
      y.yn = y.y1;
      const CriticLoss l = critic_loss(a, b, y, 1.0);
      CHECK(demo_q_gap(a, b) == doctest::Approx(c / 2.0));
      CHECK(l.q_diff == doctest::Approx(want));
      CHECK(l.total == doctest::Approx(want));
    }
    Transition plain = d;
    plain.demo = false;
    const Agent a = linear_agent(80.0);
    CriticTargets y;
    y.y1 = Eigen::VectorXd::Constant(1, 40.0);
    y.yn = y.y1;
    CHECK(critic_loss(a, {&plain}, y, 1.0).q_diff == 0.0);
  }
}

TEST_CASE("one small critic step lowers the batch loss") {
  for (int fixture = 0; fixture < 20; ++fixture) {
    std::mt19937_64 rng(100 + fixture);
    Agent a = make_agent(small_config(1), default_plant(), rng);
    std::vector<Transition> ts;
    for (int i = 0; i < 8; ++i) ts.push_back(random_transition(rng, i % 3 == 0, i == 7));
    Batch b;
    for (const auto& t : ts) b.push_back(&t);
    const CriticTargets y = critic_targets(a, b);
    Eigen::VectorXd g;
    const double before = critic_loss(a, b, y, 1.0, &g).total;
    Eigen::VectorXd p = a.critic.flat();
    AdamState st;
    adam_step(p, g, st, 1e-4);
    a.critic.assign(p);
    CHECK(critic_loss(a, b, y, 1.0).total < before);
  }
}

TEST_CASE("behaviour cloning term") {
  std::mt19937_64 rng(6);
  const Transition d = half_x_demo(rng);
  Transition plain = d;
  plain.demo = false;
  const Agent prefers_demo = linear_agent(10.0);
  CHECK(actor_loss(prefers_demo, {&plain}).bc == 0.0);
  const ActorLoss l = actor_loss(prefers_demo, {&d});
  CHECK(l.bc == doctest::Approx(0.25));
  CHECK(l.bc_active == 1);
  CHECK(l.policy == doctest::Approx(0.0));
  const Agent prefers_actor = linear_agent(-10.0);
  CHECK(actor_loss(prefers_actor, {&d}).bc == 0.0);
  const ActorLoss two = actor_loss(prefers_demo, {&d, &plain});
  CHECK(two.bc == doctest::Approx(0.125));
}

TEST_CASE("grasp selectors") {
  std::mt19937_64 rng(7);
  const Agent a = make_agent(small_config(4), default_plant(), rng);
  const StateVector s = random_state(rng);
  GraspSelector random(SelectorKind::Random);
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < 10000; ++i) ++counts[random.select(a, s, SelectMode::Sample, rng)];
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);

  GraspSelector uniform(SelectorKind::Uniform);
  uniform.begin_episode();
  std::vector<int> seq;
  for (int i = 0; i < 5; ++i) seq.push_back(uniform.select(a, s, SelectMode::Sample, rng));
  CHECK(seq == std::vector<int>{0, 1, 2, 3, 0});
  uniform.begin_episode();
  CHECK(uniform.select(a, s, SelectMode::Sample, rng) == 0);

  GraspSelector htsk(SelectorKind::Htsk);
  CHECK_THROWS_AS(htsk.select(a, s, SelectMode::Argmax, rng), PreconditionError);
}

TEST_CASE("neural grasp head separates a toy dataset") {
  std::mt19937_64 rng(8);
  AgentConfig c = small_config(8);
  c.hidden_width = 16;
  Agent a = make_agent(c, default_plant(), rng);
  std::vector<Transition> ts;
  while (ts.size() < 200) {
    Transition t = random_transition(rng, true, false);
    const double x = t.state.values[0], y = t.state.values[1];
    if (std::abs(x) < 0.02 || std::abs(y) < 0.02) continue;
    t.action.grasp = (x > 0 ? 1 : 0) + (y > 0 ? 2 : 0);
    ts.push_back(t);
  }
  Batch b;
  for (const auto& t : ts) b.push_back(&t);
  AdamState st;
  for (int it = 0; it < 1500; ++it) {
    Eigen::VectorXd g;
    selector_loss(a, b, &g);
    Eigen::VectorXd p = a.selector_net.flat();
    adam_step(p, g, st, 1e-2);
    a.selector_net.assign(p);
  }
  int right = 0;
  std::mt19937_64 unused(0);
  GraspSelector sel(SelectorKind::NeuralBC);
  for (const auto& t : ts) right += sel.select(a, t.state, SelectMode::Argmax, unused) == t.action.grasp;
  CHECK(right >= 198);
}

TEST_CASE("replay buffer") {
  std::mt19937_64 rng(9);
  Episode ep;
  for (int i = 0; i < 4; ++i) {
    Transition t = random_transition(rng, false, i == 3);
    t.reward = i + 1.0;
    ep.push_back(t);
  }
  ReplayBuffer demos(10, 2, 0.5);
  demos.add_demo_episode(ep);
  CHECK(demos.at(0).nstep_return == doctest::Approx(2.0));
  CHECK(demos.at(0).nstep_count == 2);
  CHECK(demos.at(0).nstep_state.values == ep[1].next_state.values);
  CHECK(demos.at(2).nstep_return == doctest::Approx(5.0));
  CHECK(demos.at(2).nstep_done);
  CHECK(demos.at(3).nstep_count == 1);
  CHECK(demos.at(0).demo);

  ReplayBuffer agent(10, 2, 0.5);
  for (const Transition& t : ep) agent.add(t);
  for (int i = 0; i < 4; ++i) {
    CHECK(agent.at(i).nstep_return == demos.at(i).nstep_return);
    CHECK(agent.at(i).nstep_done == demos.at(i).nstep_done);
    CHECK_FALSE(agent.at(i).demo);
  }

  for (int i = 0; i < 20; ++i) demos.add(random_transition(rng, false, true));
  CHECK(demos.demo_count() == 4u);
  CHECK(demos.agent_count() == 6u);
  CHECK(demos.at(0).reward == 1.0);
  for (std::size_t k : demos.sample(100, true, rng)) CHECK(k < 4u);

  ReplayBuffer one(10, 1, 0.99);
  one.add_demo_episode(ep);
  for (int i = 0; i < 4; ++i) CHECK(one.at(i).nstep_return == one.at(i).reward);
}

TEST_CASE("retrain counter") {
  RetrainCounter c(50);
  int fired = 0;
  for (int i = 0; i < 51; ++i) fired += c.record();
  CHECK(fired == 1);
  CHECK(c.pending() == 0);
  for (int i = 0; i < 50; ++i) fired += c.record();
  CHECK(fired == 1);
}

TEST_CASE("training schedule") {
  const PlantConfig plant = default_plant();
  const DemoDataset demos = testing::scripted_demos(3, plant);
  const GraspDataset g = grasp_dataset(demos);
  CHECK(g.size() == 6u);
  AgentConfig c = small_config(1);
  c.pretrain_rounds = 2;
  c.epochs = 1;
  c.rounds_per_epoch = 1;
  c.updates_per_step = 2;
  c.test_rounds = 1;
  c.pretrain_test_interval = 1;
  c.htsk.epochs = 20;
  const EnvFactory f = [&](std::mt19937_64& r) { return init_episode(testing::quiet_fold(), r, plant); };
  bool demo_only = true, schedule = true;
  int calls = 0;
  const TrainResult r = train_hgcr(f, demos, c, plant, 3, [&](int round, double lambda, const Batch& b) {
    ++calls;
    if (round <= 2) {
      for (const Transition* t : b) demo_only = demo_only && t->demo;
      schedule = schedule && lambda == 1.0;
    } else {
      schedule = schedule && lambda == 0.0;
    }
  });
  CHECK(demo_only);
  CHECK(schedule);
  CHECK(calls == 3 * 2 * 2);
  CHECK(r.log.updates == calls);
  REQUIRE(r.log.tests.size() == 4u);
  CHECK(r.log.tests[3].round == 3);
  CHECK(r.agent.htsk.has_value());

  c.apply(preset(3));
  bool off = true;
  train_hgcr(f, demos, c, plant, 3, [&](int, double lambda, const Batch&) { off = off && lambda == 0.0; });
  CHECK(off);

  AgentConfig wrong = c;
  wrong.task = TaskKind::Flatten;
  CHECK_THROWS_AS(train_hgcr(f, demos, wrong, plant, 3), PreconditionError);
  CHECK_THROWS_AS(train_hgcr(f, DemoDataset{}, c, plant, 3), PreconditionError);
}

TEST_CASE("evaluation") {
  const PlantConfig plant = default_plant();
  const EnvFactory f = [&](std::mt19937_64& r) { return init_episode(default_episode(TaskKind::DiagonalFold), r, plant); };
  std::mt19937_64 rng(10);
  const Agent a = make_agent(small_config(5), plant, rng);
  const std::vector<double> ten = evaluate(a, f, 10, 77);
  CHECK(ten.size() == 10u);
  const std::vector<double> three = evaluate(a, f, 3, 77);
  for (int i = 0; i < 3; ++i) CHECK(three[i] == ten[i]);

  // scripted expert: corner 0 onto the current corner 2, twice (the first pass drags the cloth)
  std::mt19937_64 er(11);
  for (int e = 0; e < 3; ++e) {
    ClothEnv env = f(er);
    double total = 0.0;
    for (int op = 0; op < 2; ++op) {
      Action a1;
      a1.grasp = 0;
      a1.place = env.observation().endpoint(2);
      total += env.apply_action(a1).reward;
    }
    CHECK(env.done());
    CHECK(env.metric() <= 0.12);
    CHECK(total == doctest::Approx(103.0 - 200.0 * env.metric()));
  }
}
