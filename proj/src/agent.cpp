#include "clothlab/agent.hpp"

#include "clothlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace clothlab {

std::string to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::Htsk: return "htsk";
    case SelectorKind::Random: return "random";
    case SelectorKind::Uniform: return "uniform";
    case SelectorKind::NeuralBC: return "neural";
  }
  return "unknown";
}

SelectorKind parse_selector(const std::string& name) {
  if (name == "htsk") return SelectorKind::Htsk;
  if (name == "random") return SelectorKind::Random;
  if (name == "uniform") return SelectorKind::Uniform;
  if (name == "neural") return SelectorKind::NeuralBC;
  throw PreconditionError("unknown grasp selector '" + name +
                          "' (expected htsk, random, uniform or neural)");
}

Preset preset(int number) {
  switch (number) {
    case 1: return {SelectorKind::Htsk, true, true};
    case 2: return {SelectorKind::NeuralBC, true, false};
    case 3: return {SelectorKind::Htsk, false, true};
    case 4: return {SelectorKind::Random, false, true};
    case 5: return {SelectorKind::Uniform, false, true};
    case 6: return {SelectorKind::Random, true, true};
    case 7: return {SelectorKind::Uniform, true, true};
    case 8: return {SelectorKind::NeuralBC, false, false};
  }
  throw PreconditionError("preset must be in 1..8, got " + std::to_string(number));
}

int default_updates_per_step(TaskKind task) {
  switch (task) {
    case TaskKind::DiagonalFold: return 80;
    case TaskKind::AxisFold: return 40;
    case TaskKind::Flatten: return 20;
  }
  return 1;
}

void AgentConfig::apply(const Preset& p) {
  selector = p.selector;
  gabc = p.gabc;
  cpl = p.cpl;
}

void AgentConfig::validate() const {
  auto fail = [](const std::string& m) { throw PreconditionError("AgentConfig: " + m); };
  if (max_operations < 1) fail("max_operations must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (nstep < 1) fail("nstep must be >= 1");
  if (lambda_1step < 0 || lambda_nstep < 0 || lambda_bc < 0) fail("loss weights must be >= 0");
  if (sigma < 0) fail("sigma must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau must be in [0, 1]");
  if (batch < 1) fail("batch must be >= 1");
  if (pretrain_rounds < 0 || epochs < 0 || rounds_per_epoch < 1) fail("bad round counts");
  if (pretrain_rounds > total_rounds()) fail("pre-training rounds exceed total rounds");
  if (updates_per_step < 0) fail("updates_per_step must be >= 0");
  if (htsk_retrain_threshold < 0) fail("htsk_retrain_threshold must be >= 0");
  if (test_rounds < 1 || pretrain_test_interval < 1) fail("bad test schedule");
  if (hidden_layers < 0 || hidden_width < 1) fail("bad network shape");
  if (replay_capacity < 1) fail("replay capacity must be positive");
  if (htsk_rules < 1) fail("htsk_rules must be >= 1");
}

AgentConfig AgentConfig::defaults(TaskKind task, int preset_number) {
  AgentConfig c;
  c.task = task;
  c.max_operations = default_max_operations(task);
  c.updates_per_step = default_updates_per_step(task);
  c.apply(preset(preset_number));
  return c;
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity, int nstep, double gamma)
    : capacity_(capacity), nstep_(nstep), gamma_(gamma) {
  if (capacity == 0) throw PreconditionError("ReplayBuffer: capacity must be positive");
  if (nstep < 1) throw PreconditionError("ReplayBuffer: nstep must be >= 1");
}

namespace {

void init_nstep(Transition& t) {
  t.nstep_return = t.reward;
  t.nstep_state = t.next_state;
  t.nstep_count = 1;
  t.nstep_done = t.done;
}

void extend(Transition& t, const Transition& next, int nstep, double gamma) {
  if (t.nstep_done || t.nstep_count >= nstep) return;
  t.nstep_return += std::pow(gamma, t.nstep_count) * next.reward;
  t.nstep_state = next.next_state;
  t.nstep_done = next.done;
  ++t.nstep_count;
}

}  // namespace

void ReplayBuffer::add_demo_episode(const Episode& episode) {
  if (demos_.size() + episode.size() > capacity_) {
    throw PreconditionError("ReplayBuffer: demonstrations exceed capacity");
  }
  // make room in the ring if needed
  while (!ring_.empty() && size() + episode.size() > capacity_) {
    ring_.pop_back();
    generation_.pop_back();
    head_ = 0;
  }
  const std::size_t first = demos_.size();
  for (Transition t : episode) {
    t.demo = true;
    init_nstep(t);
    demos_.push_back(std::move(t));
  }
  for (std::size_t i = first; i < demos_.size(); ++i) {
    for (std::size_t j = i + 1; j < demos_.size(); ++j) {
      if (demos_[i].nstep_done || demos_[i].nstep_count >= nstep_) break;
      extend(demos_[i], demos_[j], nstep_, gamma_);
    }
  }
  priority_.insert(priority_.begin() + static_cast<std::ptrdiff_t>(first), episode.size(),
                   max_priority_);
}

void ReplayBuffer::add(Transition t) {
  init_nstep(t);
  const std::size_t ring_cap = capacity_ - demos_.size();
  if (ring_cap == 0) throw PreconditionError("ReplayBuffer: full of demonstrations");
  std::size_t where;
  if (ring_.size() < ring_cap) {
    where = ring_.size();
    ring_.push_back(std::move(t));
    generation_.push_back(++writes_);
    priority_.push_back(max_priority_);
  } else {
    where = head_;
    head_ = (head_ + 1) % ring_cap;
    ring_[where] = std::move(t);
    generation_[where] = ++writes_;
    priority_[demos_.size() + where] = max_priority_;
  }
  const Transition& added = ring_[where];
  for (auto& [slot, gen] : open_) {
    if (generation_[slot] != gen) continue;  // overwritten meanwhile
    extend(ring_[slot], added, nstep_, gamma_);
  }
  open_.emplace_back(where, generation_[where]);
  std::erase_if(open_, [&](const auto& e) {
    const Transition& x = ring_[e.first];
    return generation_[e.first] != e.second || x.nstep_done || x.nstep_count >= nstep_;
  });
  if (added.done) open_.clear();
}

const Transition& ReplayBuffer::at(std::size_t k) const {
  if (k < demos_.size()) return demos_[k];
  if (k - demos_.size() >= ring_.size()) throw PreconditionError("ReplayBuffer: index out of range");
  return ring_[k - demos_.size()];
}

Transition& ReplayBuffer::slot(std::size_t k) {
  return const_cast<Transition&>(static_cast<const ReplayBuffer&>(*this).at(k));
}

void ReplayBuffer::enable_priorities(double alpha, double eps) {
  prioritized_ = true;
  alpha_ = alpha;
  eps_ = eps;
}

void ReplayBuffer::update_priority(std::size_t k, double td_error) {
  if (k >= size()) throw PreconditionError("ReplayBuffer: index out of range");
  priority_[k] = std::abs(td_error) + eps_;
  max_priority_ = std::max(max_priority_, priority_[k]);
}

double ReplayBuffer::probability(std::size_t k, bool demo_only) const {
  const std::size_t n = demo_only ? demos_.size() : size();
  if (k >= n) return 0.0;
  if (!prioritized_) return 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::pow(priority_[i], alpha_);
  return std::pow(priority_[k], alpha_) / total;
}

std::vector<std::size_t> ReplayBuffer::sample(int count, bool demo_only,
                                              std::mt19937_64& rng) const {
  const std::size_t n = demo_only ? demos_.size() : size();
  if (n == 0) {
    throw PreconditionError(demo_only ? "ReplayBuffer: no demonstrations to sample"
                                      : "ReplayBuffer: empty");
  }
  std::vector<std::size_t> out(count);
  if (!prioritized_) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& k : out) k = pick(rng);
    return out;
  }
  std::vector<double> cum(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) cum[i] = total += std::pow(priority_[i], alpha_);
  std::uniform_real_distribution<double> unit(0.0, total);
  for (auto& k : out) {
    const double u = unit(rng);
    k = std::min<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), n - 1);
  }
  return out;
}

// ---------------------------------------------------------------- actions

Eigen::VectorXd ActionScale::normalize(const Action& a) const {
  const Vec3 mid = 0.5 * (workspace.lo + workspace.hi);
  const Vec3 half = 0.5 * (workspace.hi - workspace.lo);
  Eigen::VectorXd u(6);
  u.head<3>() = a.offset / half_offset;
  u.tail<3>() = (a.place - mid).cwiseQuotient(half);
  return u;
}

Action ActionScale::denormalize(int grasp, const Eigen::VectorXd& u) const {
  const Vec3 mid = 0.5 * (workspace.lo + workspace.hi);
  const Vec3 half = 0.5 * (workspace.hi - workspace.lo);
  Action a;
  a.grasp = grasp;
  a.offset = u.head<3>() * half_offset;
  a.place = mid + u.tail<3>().cwiseProduct(half);
  return clip(a);
}

Action ActionScale::clip(const Action& a) const {
  Action c = a;
  c.offset = a.offset.cwiseMax(-half_offset).cwiseMin(half_offset);
  c.place = workspace.clamp(a.place);
  return c;
}

// ---------------------------------------------------------------- agent

namespace {

Eigen::VectorXd one_hot(int k, int n) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v[k] = 1.0;
  return v;
}

}  // namespace

Eigen::VectorXd Agent::features(const StateVector& s) const {
  const Vec3 mid = 0.5 * (scale.workspace.lo + scale.workspace.hi);
  const Vec3 half = 0.5 * (scale.workspace.hi - scale.workspace.lo);
  Eigen::VectorXd f = s.values;
  for (Eigen::Index i = 0; i + 3 < f.size(); i += 3) {
    f.segment<3>(i) = (f.segment<3>(i) - mid).cwiseQuotient(half);
  }
  return f;
}

Eigen::VectorXd Agent::actor_input(const StateVector& s, int grasp) const {
  if (!config.cpl) return features(s);
  Eigen::VectorXd x(s.values.size() + endpoints);
  x << features(s), one_hot(grasp, endpoints);
  return x;
}

Eigen::VectorXd Agent::critic_input(const StateVector& s, int grasp, const Eigen::VectorXd& u) const {
  Eigen::VectorXd x(s.values.size() + endpoints + 6);
  x << features(s), one_hot(grasp, endpoints), u;
  return x;
}

Eigen::VectorXd Agent::policy(const StateVector& s, int grasp, bool target) const {
  return (target ? target_actor : actor).forward(actor_input(s, grasp));
}

double Agent::q(const StateVector& s, int grasp, const Eigen::VectorXd& u) const {
  return critic.forward(critic_input(s, grasp, u))[0];
}

Agent make_agent(const AgentConfig& config, const PlantConfig& plant, std::mt19937_64& rng) {
  config.validate();
  Agent a;
  a.config = config;
  a.scale.half_offset = plant.mesh.edge_length / 2.0;
  a.scale.workspace = plant.workspace;
  a.endpoints = endpoint_count(config.task);
  const int S = state_dim(config.task);
  NetSpec actor{S + (config.cpl ? a.endpoints : 0), 6, config.hidden_layers, config.hidden_width,
                config.residual, OutputActivation::Tanh};
  NetSpec critic{S + a.endpoints + 6, 1, config.hidden_layers, config.hidden_width,
                 config.residual, OutputActivation::Linear};
  a.actor = DenseNet(actor, rng);
  a.critic = DenseNet(critic, rng);
  a.target_actor = a.actor;
  a.target_critic1 = a.critic;
  a.target_critic2 = DenseNet(critic, rng);
  if (config.selector == SelectorKind::NeuralBC) {
    NetSpec head{S, a.endpoints, config.hidden_layers, config.hidden_width, config.residual,
                 OutputActivation::Linear};
    a.selector_net = DenseNet(head, rng);
  }
  return a;
}

Action actor_act(const Agent& agent, const StateVector& s, int grasp, double sigma,
                 std::mt19937_64& rng) {
  if (grasp < 0 || grasp >= agent.endpoints) {
    throw PreconditionError("actor_act: grasp index " + std::to_string(grasp) + " out of range");
  }
  Action a = agent.scale.denormalize(grasp, agent.policy(s, grasp));
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (int d = 0; d < 3; ++d) a.offset[d] += noise(rng);
    for (int d = 0; d < 3; ++d) a.place[d] += noise(rng);
  }
  return agent.scale.clip(a);
}

Eigen::VectorXd neural_grasp_probabilities(const Agent& agent, const StateVector& s) {
  const Eigen::VectorXd z = agent.selector_net.forward(agent.features(s));
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

int GraspSelector::select(const Agent& agent, const StateVector& s, SelectMode mode,
                          std::mt19937_64& rng) {
  const int k = agent.endpoints;
  switch (kind_) {
    case SelectorKind::Htsk:
      if (!agent.htsk) throw PreconditionError("HTSK selector used before training");
      return select_grasp(s, *agent.htsk, mode, rng);
    case SelectorKind::Random: {
      std::uniform_int_distribution<int> pick(0, k - 1);
      return pick(rng);
    }
    case SelectorKind::Uniform: {
      const int g = next_ % k;
      ++next_;
      return g;
    }
    case SelectorKind::NeuralBC:
      return select_from(neural_grasp_probabilities(agent, s), mode, rng);
  }
  return 0;
}

namespace {

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& cols) {
  Eigen::MatrixXd m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cols[i];
  return m;
}

// min_j Q'_j(s, (g, mu'(s, g))) for each (state, grasp) pair.
Eigen::VectorXd target_value(const Agent& agent, const std::vector<const StateVector*>& states,
                             const std::vector<int>& grasps) {
  std::vector<Eigen::VectorXd> ain, cin;
  ain.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) ain.push_back(agent.actor_input(*states[i], grasps[i]));
  const Eigen::MatrixXd U = agent.target_actor.forward(stack(ain));
  cin.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    cin.push_back(agent.critic_input(*states[i], grasps[i], U.col(static_cast<Eigen::Index>(i))));
  }
  const Eigen::MatrixXd X = stack(cin);
  const Eigen::MatrixXd q1 = agent.target_critic1.forward(X);
  const Eigen::MatrixXd q2 = agent.target_critic2.forward(X);
  return q1.cwiseMin(q2).row(0).transpose();
}

// Successor value under the selector's grasp choice.
Eigen::VectorXd successor_value(const Agent& agent, const std::vector<const StateVector*>& states) {
  const int k = agent.endpoints;
  const SelectorKind kind = agent.config.selector;
  const bool learned = (kind == SelectorKind::Htsk && agent.htsk) || kind == SelectorKind::NeuralBC;
  std::mt19937_64 unused(0);
  if (learned) {
    std::vector<int> g(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      g[i] = kind == SelectorKind::Htsk
                 ? select_grasp(*states[i], *agent.htsk, SelectMode::Argmax, unused)
                 : select_from(neural_grasp_probabilities(agent, *states[i]), SelectMode::Argmax,
                               unused);
    }
    return target_value(agent, states, g);
  }
  std::vector<const StateVector*> rep;
  std::vector<int> g;
  for (const StateVector* s : states) {
    for (int p = 0; p < k; ++p) {
      rep.push_back(s);
      g.push_back(p);
    }
  }
  const Eigen::VectorXd v = target_value(agent, rep, g);
  return v.reshaped(k, static_cast<Eigen::Index>(states.size())).colwise().mean().transpose();
}

Eigen::MatrixXd critic_inputs(const Agent& agent, const Batch& batch) {
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(batch.size());
  for (const Transition* t : batch) {
    cols.push_back(agent.critic_input(t->state, t->action.grasp, agent.scale.normalize(t->action)));
  }
  return stack(cols);
}

Eigen::MatrixXd actor_inputs(const Agent& agent, const Batch& batch) {
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(batch.size());
  for (const Transition* t : batch) cols.push_back(agent.actor_input(t->state, t->action.grasp));
  return stack(cols);
}

// Critic inputs with the action part replaced by U's columns.
Eigen::MatrixXd with_actions(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) {
  Eigen::MatrixXd out = X;
  out.bottomRows(6) = U;
  return out;
}

}  // namespace

CriticTargets critic_targets(const Agent& agent, const Batch& batch) {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const double gamma = agent.config.gamma;
  std::vector<const StateVector*> next1, nextn;
  std::vector<Eigen::Index> idx1, idxn;
  for (Eigen::Index i = 0; i < B; ++i) {
    const Transition& t = *batch[i];
    if (!t.done) {
      next1.push_back(&t.next_state);
      idx1.push_back(i);
    }
    if (!t.nstep_done) {
      nextn.push_back(&t.nstep_state);
      idxn.push_back(i);
    }
  }
  CriticTargets y;
  y.y1.resize(B);
  y.yn.resize(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    y.y1[i] = batch[i]->reward;
    y.yn[i] = batch[i]->nstep_return;
  }
  if (!next1.empty()) {
    const Eigen::VectorXd v = successor_value(agent, next1);
    for (std::size_t q = 0; q < idx1.size(); ++q) y.y1[idx1[q]] += gamma * v[q];
  }
  if (!nextn.empty()) {
    const Eigen::VectorXd v = successor_value(agent, nextn);
    for (std::size_t q = 0; q < idxn.size(); ++q) {
      y.yn[idxn[q]] += std::pow(gamma, batch[idxn[q]]->nstep_count) * v[q];
    }
  }
  return y;
}

CriticLoss critic_loss(const Agent& agent, const Batch& batch, const CriticTargets& targets,
                       double lambda_diff, Eigen::VectorXd* grad, const Eigen::VectorXd* weights) {
  const AgentConfig& c = agent.config;
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw PreconditionError("critic_loss: empty batch");
  const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(B);

  const Eigen::MatrixXd Xa = critic_inputs(agent, batch);
  DenseNet::Cache ca;
  const Eigen::VectorXd qa = agent.critic.forward(Xa, ca).row(0).transpose();
  CriticLoss out;
  out.td_error = qa - targets.y1;
  const Eigen::VectorXd tdn = qa - targets.yn;
  out.one_step = (w.array() * out.td_error.array().square()).mean();
  out.n_step = (w.array() * tdn.array().square()).mean();
  Eigen::MatrixXd up_a =
      ((2.0 * c.lambda_1step * w.array() * out.td_error.array() +
        2.0 * c.lambda_nstep * w.array() * tdn.array()) / static_cast<double>(B)).matrix().transpose();

  std::vector<Eigen::Index> demo;
  for (Eigen::Index i = 0; i < B; ++i)
    if (batch[i]->demo) demo.push_back(i);

  DenseNet::Cache cw;
  Eigen::MatrixXd up_w;
  if (lambda_diff > 0.0 && !demo.empty()) {
    Batch db;
    for (Eigen::Index i : demo) db.push_back(batch[i]);
    const Eigen::MatrixXd U = agent.actor.forward(actor_inputs(agent, db));
    Eigen::MatrixXd Xd(Xa.rows(), static_cast<Eigen::Index>(demo.size()));
    for (std::size_t q = 0; q < demo.size(); ++q) Xd.col(q) = Xa.col(demo[q]);
    const Eigen::VectorXd qw = agent.critic.forward(with_actions(Xd, U), cw).row(0).transpose();
    up_w = Eigen::MatrixXd::Zero(1, qw.size());
    const double nd = static_cast<double>(demo.size());
    double sum = 0.0;
    for (std::size_t q = 0; q < demo.size(); ++q) {
      const double gap = qa[demo[q]] - qw[q];
      if (gap < c.q_margin) {
        sum += c.q_margin - gap;
        up_a(0, demo[q]) -= lambda_diff / nd;
        up_w(0, q) += lambda_diff / nd;
      }
    }
    out.q_diff = sum / nd;
  }
  out.total = c.lambda_1step * out.one_step + c.lambda_nstep * out.n_step + lambda_diff * out.q_diff;
  if (grad) {
    *grad = DenseNet::flatten(agent.critic.backward(ca, up_a));
    if (up_w.size() > 0) *grad += DenseNet::flatten(agent.critic.backward(cw, up_w));
  }
  return out;
}

ActorLoss actor_loss(const Agent& agent, const Batch& batch, Eigen::VectorXd* grad) {
  const AgentConfig& c = agent.config;
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw PreconditionError("actor_loss: empty batch");
  DenseNet::Cache cu, cq;
  const Eigen::MatrixXd U = agent.actor.forward(actor_inputs(agent, batch), cu);
  const Eigen::MatrixXd Xa = critic_inputs(agent, batch);
  const Eigen::VectorXd qw = agent.critic.forward(with_actions(Xa, U), cq).row(0).transpose();
  ActorLoss out;
  out.policy = -qw.mean();
  Eigen::MatrixXd dU = Eigen::MatrixXd::Zero(6, B);
  if (grad) {
    const Eigen::MatrixXd up = Eigen::MatrixXd::Constant(1, B, -1.0 / static_cast<double>(B));
    dU = agent.critic.backward(cq, up).input.bottomRows(6);
  }
  bool any_demo = false;
  for (const Transition* t : batch) any_demo = any_demo || t->demo;
  double bc = 0.0;
  if (any_demo && c.lambda_bc > 0.0) {
    const Eigen::VectorXd qa = agent.critic.forward(Xa).row(0).transpose();
    for (Eigen::Index i = 0; i < B; ++i) {
      if (!batch[i]->demo || !(qa[i] > qw[i])) continue;
      const Eigen::VectorXd diff = U.col(i) - Xa.col(i).tail(6);
      bc += diff.squaredNorm();
      ++out.bc_active;
      dU.col(i) += 2.0 * c.lambda_bc * diff / static_cast<double>(B);
    }
  }
  out.bc = bc / static_cast<double>(B);
  out.total = out.policy + c.lambda_bc * out.bc;
  if (grad) *grad = DenseNet::flatten(agent.actor.backward(cu, dU));
  return out;
}

double demo_q_gap(const Agent& agent, const Batch& batch) {
  Batch db;
  for (const Transition* t : batch)
    if (t->demo) db.push_back(t);
  if (db.empty()) return 0.0;
  const Eigen::MatrixXd Xa = critic_inputs(agent, db);
  const Eigen::MatrixXd U = agent.actor.forward(actor_inputs(agent, db));
  const Eigen::VectorXd qa = agent.critic.forward(Xa).row(0).transpose();
  const Eigen::VectorXd qw = agent.critic.forward(with_actions(Xa, U)).row(0).transpose();
  return (qa - qw).mean();
}

double selector_loss(const Agent& agent, const Batch& batch, Eigen::VectorXd* grad) {
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  for (const Transition* t : batch) {
    if (!t->demo && !t->advances) continue;
    xs.push_back(agent.features(t->state));
    ys.push_back(t->action.grasp);
  }
  if (xs.empty()) {
    if (grad) *grad = Eigen::VectorXd::Zero(agent.selector_net.parameter_count());
    return 0.0;
  }
  DenseNet::Cache cache;
  const Eigen::MatrixXd Z = agent.selector_net.forward(stack(xs), cache);
  Eigen::MatrixXd up(Z.rows(), Z.cols());
  double loss = 0.0;
  const double n = static_cast<double>(xs.size());
  for (Eigen::Index i = 0; i < Z.cols(); ++i) {
    const double m = Z.col(i).maxCoeff();
    const Eigen::VectorXd e = (Z.col(i).array() - m).exp();
    const double lse = m + std::log(e.sum());
    loss += lse - Z(ys[i], i);
    up.col(i) = e / e.sum();
    up(ys[i], i) -= 1.0;
  }
  up /= n;
  if (grad) *grad = DenseNet::flatten(agent.selector_net.backward(cache, up));
  return loss / n;
}

UpdateStats update(Agent& agent, const Batch& batch, double lambda_diff,
                   const Eigen::VectorXd* weights) {
  const AgentConfig& c = agent.config;
  UpdateStats st;
  Eigen::VectorXd g;
  const CriticTargets y = critic_targets(agent, batch);
  st.critic = critic_loss(agent, batch, y, lambda_diff, &g, weights);
  Eigen::VectorXd p = agent.critic.flat();
  adam_step(p, g, agent.critic_adam, c.critic_lr);
  agent.critic.assign(p);

  st.actor = actor_loss(agent, batch, &g);
  p = agent.actor.flat();
  adam_step(p, g, agent.actor_adam, c.actor_lr);
  agent.actor.assign(p);

  if (c.selector == SelectorKind::NeuralBC) {
    selector_loss(agent, batch, &g);
    p = agent.selector_net.flat();
    adam_step(p, g, agent.selector_adam, c.selector_lr);
    agent.selector_net.assign(p);
  }
  soft_update(agent.target_actor, agent.actor, c.tau);
  soft_update(agent.target_critic1, agent.critic, c.tau);
  soft_update(agent.target_critic2, agent.critic, c.tau);
  return st;
}

GraspDataset grasp_dataset(const DemoDataset& demos) {
  GraspDataset d;
  d.classes = endpoint_count(demos.task);
  for (const Episode& ep : demos.episodes) {
    for (const Transition& t : ep) {
      d.inputs.push_back(t.state.values);
      d.labels.push_back(t.action.grasp);
    }
  }
  return d;
}

std::vector<double> evaluate(const Agent& agent, const EnvFactory& env_factory, int episodes,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GraspSelector sel(agent.config.selector);
  std::vector<double> out;
  out.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    ClothEnv env = env_factory(rng);
    sel.begin_episode();
    double total = 0.0;
    while (!env.done()) {
      const StateVector& s = env.observation();
      const int g = sel.select(agent, s, SelectMode::Argmax, rng);
      total += env.apply_action(actor_act(agent, s, g, 0.0, rng)).reward;
    }
    out.push_back(total);
  }
  return out;
}

namespace {

HtskModel fit_htsk(const GraspDataset& data, const AgentConfig& c, const HtskModel* start,
                   std::mt19937_64& rng) {
  const HtskModel init = start
                             ? *start
                             : init_htsk(data, std::min<int>(c.htsk_rules, static_cast<int>(data.size())), rng);
  return train(data, init, c.htsk, rng).model;
}

}  // namespace

TrainResult train_hgcr(const EnvFactory& env_factory, const DemoDataset& demos,
                       const AgentConfig& config, const PlantConfig& plant, std::uint64_t seed,
                       const UpdateHook& hook) {
  config.validate();
  if (demos.task != config.task && !demos.episodes.empty()) {
    throw PreconditionError("train_hgcr: demonstrations are for task " + to_string(demos.task));
  }
  const bool needs_demos = config.selector == SelectorKind::Htsk || config.pretrain_rounds > 0;
  if (needs_demos && demos.transition_count() == 0) {
    throw PreconditionError("train_hgcr: this configuration needs demonstrations");
  }
  std::mt19937_64 rng(seed);
  const std::uint64_t test_seed = seed ^ 0x9e3779b97f4a7c15ULL;
  TrainResult res{make_agent(config, plant, rng), {}};
  Agent& agent = res.agent;
  TrainLog& log = res.log;

  ReplayBuffer buffer(config.replay_capacity, config.nstep, config.gamma);
  if (config.prioritized) buffer.enable_priorities(config.priority_alpha, config.priority_eps);
  for (const Episode& ep : demos.episodes) buffer.add_demo_episode(ep);

  GraspDataset grasp = grasp_dataset(demos);
  grasp.classes = agent.endpoints;
  if (config.selector == SelectorKind::Htsk) agent.htsk = fit_htsk(grasp, config, nullptr, rng);

  log.tests.push_back({0, evaluate(agent, env_factory, config.test_rounds, test_seed)});

  GraspSelector sel(config.selector);
  RetrainCounter retrain(config.htsk_retrain_threshold);
  const int total = config.total_rounds();
  for (int round = 1; round <= total; ++round) {
    const bool pre = round <= config.pretrain_rounds;
    const double lambda_diff = pre && config.gabc ? 1.0 : 0.0;
    ClothEnv env = env_factory(rng);
    sel.begin_episode();
    double ret = 0.0;
    while (!env.done()) {
      Transition t;
      t.state = env.observation();
      const int g = sel.select(agent, t.state, SelectMode::Sample, rng);
      t.action = actor_act(agent, t.state, g, config.sigma, rng);
      const double prev = env.metric();
      const StepResult sr = env.apply_action(t.action);
      t.reward = sr.reward;
      t.next_state = sr.state;
      t.done = sr.done;
      t.advances = significant_progress(config.task, prev, env.metric(),
                                        env.config().change_threshold);
      ret += t.reward;
      if (t.advances) {
        grasp.inputs.push_back(t.state.values);
        grasp.labels.push_back(t.action.grasp);
        ++log.grasp_records;
        if (retrain.record() && config.selector == SelectorKind::Htsk) {
          agent.htsk = fit_htsk(grasp, config, &*agent.htsk, rng);
          ++log.htsk_retrains;
        }
      }
      buffer.add(std::move(t));

      for (int b = 0; b < config.updates_per_step; ++b) {
        const std::vector<std::size_t> idx = buffer.sample(config.batch, pre, rng);
        Batch batch;
        batch.reserve(idx.size());
        for (std::size_t k : idx) batch.push_back(&buffer.at(k));
        Eigen::VectorXd iw;
        if (buffer.prioritized()) {
          iw.resize(static_cast<Eigen::Index>(idx.size()));
          const double n = static_cast<double>(pre ? buffer.demo_count() : buffer.size());
          for (std::size_t q = 0; q < idx.size(); ++q) {
            iw[q] = std::pow(n * buffer.probability(idx[q], pre), -config.priority_beta);
          }
          iw /= iw.maxCoeff();
        }
        const UpdateStats st = update(agent, batch, lambda_diff, buffer.prioritized() ? &iw : nullptr);
        ++log.updates;
        if (buffer.prioritized()) {
          for (std::size_t q = 0; q < idx.size(); ++q) buffer.update_priority(idx[q], st.critic.td_error[q]);
        }
        if (hook) hook(round, lambda_diff, batch);
      }
    }
    log.round_rewards.push_back(ret);
    const bool test = pre ? round % config.pretrain_test_interval == 0
                          : (round - config.pretrain_rounds) % config.rounds_per_epoch == 0;
    if (test) log.tests.push_back({round, evaluate(agent, env_factory, config.test_rounds, test_seed)});
  }
  return res;
}

}  // namespace clothlab
