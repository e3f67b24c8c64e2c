#pragma once

// Demonstration-enhanced actor-critic learner with a separate grasp-point
// selector, replay machinery and the ablation presets.

#include "clothlab/dataset.hpp"
#include "clothlab/htsk.hpp"
#include "clothlab/nn.hpp"
#include "clothlab/tasks.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace clothlab {

enum class SelectorKind { Htsk, Random, Uniform, NeuralBC };

std::string to_string(SelectorKind kind);
SelectorKind parse_selector(const std::string& name);

/// Preset p in 1..8 as (selector, GABC, CPL).
struct Preset {
  SelectorKind selector = SelectorKind::Htsk;
  bool gabc = true;
  bool cpl = true;
};

Preset preset(int number);

/// Updates per environment step t_n: 80 / 40 / 20.
int default_updates_per_step(TaskKind task);

struct AgentConfig {
  TaskKind task = TaskKind::DiagonalFold;
  int max_operations = 2;  // t_m of the training environment
  double gamma = 0.99;
  int nstep = 5;
  double lambda_1step = 1.0;
  double lambda_nstep = 0.5;
  double lambda_bc = 1.0;
  double q_margin = 100.0;
  double sigma = 0.01;  // [m] exploration noise per action component
  double tau = 0.001;
  int batch = 64;
  int pretrain_rounds = 20;  // M_p
  int epochs = 30;
  int rounds_per_epoch = 20;
  int updates_per_step = 80;  // t_n
  int htsk_retrain_threshold = 50;
  int test_rounds = 10;
  int pretrain_test_interval = 5;
  double actor_lr = 1e-5;
  double critic_lr = 1e-3;
  double selector_lr = 1e-3;  // NeuralBC head
  int hidden_layers = 50;
  int hidden_width = 16;
  bool residual = false;
  std::size_t replay_capacity = 100000;
  bool prioritized = false;
  double priority_alpha = 0.6;
  double priority_beta = 0.4;
  double priority_eps = 1e-3;
  int htsk_rules = 10;
  HtskTrainConfig htsk;
  SelectorKind selector = SelectorKind::Htsk;
  bool gabc = true;
  bool cpl = true;

  int total_rounds() const { return pretrain_rounds + epochs * rounds_per_epoch; }
  void apply(const Preset& p);
  void validate() const;

  static AgentConfig defaults(TaskKind task, int preset_number = 1);
};

/// Replay storage; demonstrations are kept forever, agent data lives in a ring.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int nstep, double gamma);

  /// Whole demonstration episode; n-step fields are computed here.
  void add_demo_episode(const Episode& episode);
  /// Agent transition of the current episode. Earlier transitions of the
  /// episode get their n-step fields extended as the episode continues.
  void add(Transition t);

  std::size_t size() const { return demos_.size() + ring_.size(); }
  std::size_t demo_count() const { return demos_.size(); }
  std::size_t agent_count() const { return ring_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// Entry k: demos first, then the ring in slot order.
  const Transition& at(std::size_t k) const;

  /// Uniform (or proportional, when enabled) indices; demo_only restricts to demos.
  std::vector<std::size_t> sample(int count, bool demo_only, std::mt19937_64& rng) const;
  /// Sampling probability of entry k under the current mode.
  double probability(std::size_t k, bool demo_only) const;

  void enable_priorities(double alpha, double eps);
  bool prioritized() const { return prioritized_; }
  void update_priority(std::size_t k, double td_error);

 private:
  void extend_nstep(std::vector<Transition*>& episode);
  Transition& slot(std::size_t k);

  std::size_t capacity_;
  int nstep_;
  double gamma_;
  std::vector<Transition> demos_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;  // next ring slot to overwrite once full
  std::vector<double> priority_;  // parallel to entries (demos then ring)
  bool prioritized_ = false;
  double alpha_ = 0.6;
  double eps_ = 1e-3;
  double max_priority_ = 1.0;
  // ring slots of the episode in progress with their write generation
  std::vector<std::pair<std::size_t, std::uint64_t>> open_;
  std::vector<std::uint64_t> generation_;
  std::uint64_t writes_ = 0;
};

using Batch = std::vector<const Transition*>;

/// Actor outputs live in [-1, 1]^6: offset scaled by l_s/2, placement by the workspace box.
struct ActionScale {
  double half_offset = 0.12;
  Workspace workspace;

  Eigen::VectorXd normalize(const Action& a) const;
  Action denormalize(int grasp, const Eigen::VectorXd& u) const;
  /// Clip (offset, place) to the action bounds.
  Action clip(const Action& a) const;
};

struct Agent {
  AgentConfig config;
  ActionScale scale;
  int endpoints = 4;
  DenseNet actor;
  DenseNet critic;
  DenseNet target_actor;
  DenseNet target_critic1;
  DenseNet target_critic2;
  DenseNet selector_net;  // NeuralBC head (state -> logits)
  std::optional<HtskModel> htsk;
  AdamState actor_adam;
  AdamState critic_adam;
  AdamState selector_adam;

  int state_size() const { return state_dim(config.task); }
  /// State with every point mapped into the workspace box [-1, 1]^3; area fraction kept.
  Eigen::VectorXd features(const StateVector& s) const;
  Eigen::VectorXd actor_input(const StateVector& s, int grasp) const;
  Eigen::VectorXd critic_input(const StateVector& s, int grasp, const Eigen::VectorXd& u) const;
  /// Normalized actor output u in [-1, 1]^6.
  Eigen::VectorXd policy(const StateVector& s, int grasp, bool target = false) const;
  double q(const StateVector& s, int grasp, const Eigen::VectorXd& u) const;
};

Agent make_agent(const AgentConfig& config, const PlantConfig& plant, std::mt19937_64& rng);

/// Offset and placement from the actor plus N(0, sigma^2) per component, clipped.
Action actor_act(const Agent& agent, const StateVector& s, int grasp, double sigma,
                 std::mt19937_64& rng);

/// Per-episode grasp selection state (round-robin counter).
class GraspSelector {
 public:
  explicit GraspSelector(SelectorKind kind) : kind_(kind) {}
  void begin_episode() { next_ = 0; }
  int select(const Agent& agent, const StateVector& s, SelectMode mode, std::mt19937_64& rng);
  SelectorKind kind() const { return kind_; }

 private:
  SelectorKind kind_;
  int next_ = 0;
};

Eigen::VectorXd neural_grasp_probabilities(const Agent& agent, const StateVector& s);

struct CriticTargets {
  Eigen::VectorXd y1;
  Eigen::VectorXd yn;
};

/// Twin-minimum targets. The successor grasp is the selector's argmax for
/// learned selectors and the uniform average over grasps for Random/Uniform.
CriticTargets critic_targets(const Agent& agent, const Batch& batch);

struct CriticLoss {
  double total = 0.0;
  double one_step = 0.0;
  double n_step = 0.0;
  double q_diff = 0.0;
  Eigen::VectorXd td_error;  // Q - y1 per sample
};

/// weights: optional importance weights for the TD terms.
CriticLoss critic_loss(const Agent& agent, const Batch& batch, const CriticTargets& targets,
                       double lambda_diff, Eigen::VectorXd* grad = nullptr,
                       const Eigen::VectorXd* weights = nullptr);

struct ActorLoss {
  double total = 0.0;
  double policy = 0.0;  // -mean Q
  double bc = 0.0;
  int bc_active = 0;
};

ActorLoss actor_loss(const Agent& agent, const Batch& batch, Eigen::VectorXd* grad = nullptr);

/// Mean of Q(s, a) - Q(s, w) over the demo transitions of the batch (0 if none).
double demo_q_gap(const Agent& agent, const Batch& batch);

/// Cross-entropy of the NeuralBC head on the grasp-dataset members of the batch.
double selector_loss(const Agent& agent, const Batch& batch, Eigen::VectorXd* grad = nullptr);

struct UpdateStats {
  CriticLoss critic;
  ActorLoss actor;
};

/// One critic step, one actor step, NeuralBC step when used, soft target updates.
UpdateStats update(Agent& agent, const Batch& batch, double lambda_diff,
                   const Eigen::VectorXd* weights = nullptr);

GraspDataset grasp_dataset(const DemoDataset& demos);

/// Fires once more than `threshold` new grasp records have arrived since the last firing.
class RetrainCounter {
 public:
  explicit RetrainCounter(int threshold) : threshold_(threshold) {}
  bool record() {
    if (++fresh_ <= threshold_) return false;
    fresh_ = 0;
    return true;
  }
  int pending() const { return fresh_; }

 private:
  int threshold_;
  int fresh_ = 0;
};

using EnvFactory = std::function<ClothEnv(std::mt19937_64&)>;

struct TestRecord {
  int round = 0;  // training rounds completed before the test
  std::vector<double> rewards;
};

struct TrainLog {
  std::vector<TestRecord> tests;
  int htsk_retrains = 0;
  int grasp_records = 0;
  long updates = 0;
  std::vector<double> round_rewards;
};

struct TrainResult {
  Agent agent;
  TrainLog log;
};

/// Hook called after each gradient update (round index, lambda_diff, batch).
using UpdateHook = std::function<void(int, double, const Batch&)>;

TrainResult train_hgcr(const EnvFactory& env_factory, const DemoDataset& demos,
                       const AgentConfig& config, const PlantConfig& plant, std::uint64_t seed,
                       const UpdateHook& hook = {});

/// Total reward per noise-free episode. Environments come from a fresh
/// generator seeded with `seed`.
std::vector<double> evaluate(const Agent& agent, const EnvFactory& env_factory, int episodes,
                             std::uint64_t seed);

}  // namespace clothlab
