#pragma once

// Receding-horizon control of the spring-mass model with per-particle
// external forces, the force-to-action mapping and demo collection.

#include "clothlab/cloth.hpp"
#include "clothlab/dataset.hpp"
#include "clothlab/errors.hpp"
#include "clothlab/tasks.hpp"

#include <Eigen/Core>

#include <optional>
#include <random>
#include <vector>

namespace clothlab {

struct PairTarget {
  int i = 0;
  int j = 0;
  double l_ref = 0.0;
  double weight = 1.0;
};

using PairTargets = std::vector<PairTarget>;

PairTargets target_pairs(TaskKind task, const MeshTopology& topo);

/// Sum of w (l - l_ref)^2 over the target pairs.
double stage_loss(const std::vector<Vec3>& positions, const PairTargets& targets);

struct NmpcConfig {
  int horizon = 5;  // H_p
  double u_max = 10.0;
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  double initial_step = 1.0;  // largest force change of the first iteration [N]
  double penalty_weight = 1e3;
  // Internal model springs; <= 0 keeps the plant values. The plant constants
  // are unstable at the coarse model step.
  double model_stiffness = 5.0;
  double model_damping = 0.02;
  Workspace workspace;
  SimParams model = default_model();

  static SimParams default_model();
  void validate() const;
};

/// Forces laid out as U[(k * N + i) * 3 + d].
struct NmpcSolution {
  Eigen::VectorXd forces;
  std::vector<std::vector<Vec3>> predicted;  // X*_{t+1} ... X*_{t+H_p}
  double objective = 0.0;
  double zero_objective = 0.0;  // J(U = 0)
  int iterations = 0;
  int horizon = 0;
  int particles = 0;

  Vec3 force(int k, int i) const { return forces.segment<3>((k * particles + i) * 3); }
};

struct RolloutResult {
  double objective = 0.0;
  Eigen::VectorXd gradient;
  std::vector<ClothState> states;  // H_p + 1 states, states[0] is the input
};

/// J(U) and dJ/dU by reverse accumulation through the model rollout.
RolloutResult rollout_objective(const ClothState& start, const Eigen::VectorXd& forces,
                                const PairTargets& targets, const MeshTopology& topo,
                                const NmpcConfig& config, bool want_gradient = true);

class NmpcError : public Error {
 public:
  NmpcError(const std::string& what, Eigen::VectorXd iterate)
      : Error(what), iterate(std::move(iterate)) {}
  Eigen::VectorXd iterate;
};

/// Plant topology with springs rescaled to the model stiffness and damping.
MeshTopology model_topology(const MeshTopology& plant, const NmpcConfig& config);

/// Projected gradient descent (Barzilai-Borwein steps, Armijo backtracking)
/// with warm starts carried between calls.
class NmpcSolver {
 public:
  /// `topo` is the plant mesh; the solver keeps its own model copy.
  NmpcSolver(NmpcConfig config, const MeshTopology& topo);

  NmpcSolution solve(const ClothState& start, const PairTargets& targets);
  void reset_warm_start() { warm_.resize(0); }
  const NmpcConfig& config() const { return config_; }
  const MeshTopology& model() const { return model_; }

 private:
  NmpcConfig config_;
  MeshTopology model_;
  Eigen::VectorXd warm_;
};

/// One-shot solve from zero initial forces.
NmpcSolution solve(const ClothState& start, const PairTargets& targets, const MeshTopology& topo,
                   const NmpcConfig& config);

/// Converts the first-step forces into a pick-place action. Empty when every
/// candidate force is zero (converged).
std::optional<Action> map_to_action(const NmpcSolution& solution, const ClothState& current,
                                    const StateVector& sv, const MeshTopology& topo,
                                    const Workspace& workspace);

/// Particles considered by map_to_action: nearest 10 to each endpoint plus their neighbors.
std::vector<int> candidate_particles(const ClothState& current, const StateVector& sv,
                                     const MeshTopology& topo);

struct DemoConfig {
  NmpcConfig nmpc;
  EpisodeConfig episode;  // max_operations is the per-episode operation cap
  PlantConfig plant = default_plant();
  double convergence_tolerance = 0.01;

  static DemoConfig defaults(TaskKind task);
};

/// r_ts per task: 80 / 75 / 70.
double default_reward_threshold(TaskKind task);

struct DemoEpisodeResult {
  Episode transitions;
  double final_reward = 0.0;
  double final_metric = 0.0;
  bool failed = false;
};

/// Runs one NMPC episode on the plant, re-planning from the true cloth each operation.
DemoEpisodeResult run_demo_episode(const DemoConfig& config, std::uint64_t seed);

struct DemoCollection {
  DemoDataset dataset;
  std::vector<DemoEpisodeResult> episodes;  // every attempted episode, in order
};

DemoCollection collect_demos(TaskKind task, int episode_count, double reward_threshold,
                             int keep_top, const DemoConfig& config, std::mt19937_64& rng);

}  // namespace clothlab
