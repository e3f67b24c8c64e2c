#pragma once

// Task definitions: observations, goal errors, rewards and the episode loop
// on top of the cloth plant.

#include "clothlab/cloth.hpp"
#include "clothlab/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <random>
#include <string>
#include <vector>

namespace clothlab {

enum class TaskKind { DiagonalFold, AxisFold, Flatten };

std::string to_string(TaskKind task);
/// Accepts "diagonal", "axis", "flatten". Throws PreconditionError.
TaskKind parse_task(const std::string& name);

/// k: corners for folds, octagon vertices for flatten.
int endpoint_count(TaskKind task);
/// 13 for folds, 28 for flatten.
int state_dim(TaskKind task);
/// Default operation limit t_m: 2 / 4 / 10.
int default_max_operations(TaskKind task);
bool is_fold(TaskKind task);

/// Mesh corner particle indices in state-vector order.
std::array<int, 4> corner_indices(TaskKind task, int n);

struct StateVector {
  TaskKind task = TaskKind::DiagonalFold;
  Eigen::VectorXd values;

  Vec3 endpoint(int i) const { return values.segment<3>(3 * i); }
  double area_fraction() const { return values[values.size() - 1]; }
  /// Flatten only.
  Vec3 centroid() const { return values.segment<3>(3 * endpoint_count(task)); }
};

struct Action {
  int grasp = 0;  // endpoint index
  Vec3 offset = Vec3::Zero();
  Vec3 place = Vec3::Zero();
};

struct Workspace {
  Vec3 lo{-0.5, -0.5, 0.0};
  Vec3 hi{0.5, 0.5, 0.4};

  bool contains(const Vec3& p) const;
  Vec3 clamp(const Vec3& p) const;
};

/// Plant configuration shared by every environment.
struct PlantConfig {
  MeshOptions mesh;
  SimParams sim;
  MotionParams motion;
  Workspace workspace;
  double cell_fraction = 1.0 / 48.0;  // raster cell size as a fraction of l_s
  double dp_epsilon = 0.01;

  double cell_size() const { return mesh.edge_length * cell_fraction; }
};

/// Triangulated mesh with table friction, used as the default plant.
PlantConfig default_plant();

struct EpisodeConfig {
  TaskKind task = TaskKind::DiagonalFold;
  int max_operations = 2;  // t_m
  double change_threshold = 0.02;  // t_z
  int flatten_init_steps = 10;
  double flatten_min_displacement = 0.1;
  double flatten_max_displacement = 0.2;
  double fold_translation_noise = 0.02;  // [m], uniform +/-
  double fold_rotation_noise = 10.0;     // [deg], uniform +/-

  void validate() const;
};

EpisodeConfig default_episode(TaskKind task);

StateVector extract_state(const ClothState& state, const MeshTopology& topo, TaskKind task,
                          const PlantConfig& plant);

double area_fraction(const ClothState& state, const MeshTopology& topo, const PlantConfig& plant);

double error_diagonal(const StateVector& sv, double edge_length);
double error_axis(const StateVector& sv, double edge_length);
/// e_t for folds, f_t for flatten.
double task_metric(const StateVector& sv, double edge_length);

double reward(TaskKind task, double prev_metric, double cur_metric, bool done,
              double change_threshold);

/// True when the step from prev to cur significantly advances the task.
bool significant_progress(TaskKind task, double prev_metric, double cur_metric,
                          double change_threshold);

struct StepResult {
  StateVector state;
  double reward = 0.0;
  bool done = false;
  bool grasp_missed = false;
};

class ClothEnv {
 public:
  explicit ClothEnv(const EpisodeConfig& config, const PlantConfig& plant = default_plant());

  /// Randomized initial cloth per task; resets the operation count.
  void reset(std::mt19937_64& rng);
  /// Replaces the cloth and re-observes; resets the operation count.
  void reset_to(const ClothState& cloth);

  /// Throws RejectedActionError when the action violates its bounds.
  StepResult apply_action(const Action& action);
  void validate_action(const Action& action) const;

  const StateVector& observation() const { return obs_; }
  const ClothState& cloth() const { return cloth_; }
  const MeshTopology& topology() const { return topo_; }
  const EpisodeConfig& config() const { return config_; }
  const PlantConfig& plant() const { return plant_; }
  int operations() const { return ops_; }
  bool done() const { return ops_ >= config_.max_operations; }
  double metric() const { return metric_; }

 private:
  void observe();

  EpisodeConfig config_;
  PlantConfig plant_;
  MeshTopology topo_;
  ClothState cloth_;
  StateVector obs_;
  double metric_ = 0.0;
  int ops_ = 0;
};

ClothEnv init_episode(const EpisodeConfig& config, std::mt19937_64& rng,
                      const PlantConfig& plant = default_plant());

}  // namespace clothlab
