#pragma once

// High-dimensional TSK fuzzy classifier used as the grasp-point selector.

#include "clothlab/tasks.hpp"

#include <Eigen/Core>

#include <random>
#include <vector>

namespace clothlab {

struct HtskModel {
  Eigen::MatrixXd centers;      // R x M
  Eigen::MatrixXd log_widths;   // R x M, sigma = exp(.)
  Eigen::MatrixXd consequents;  // R x k, order-zero class scores per rule

  int rules() const { return static_cast<int>(centers.rows()); }
  int inputs() const { return static_cast<int>(centers.cols()); }
  int classes() const { return static_cast<int>(consequents.cols()); }

  /// centers, log-widths, consequents, each column-major.
  Eigen::VectorXd flat() const;
  void assign(const Eigen::VectorXd& params);
  void validate() const;
};

struct GraspDataset {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<int> labels;  // 0-based
  int classes = 4;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
};

/// Softmax over the per-rule mean log-membership.
Eigen::VectorXd firing_levels(const Eigen::VectorXd& x, const HtskModel& model);
/// Classical TSK normalisation (product of memberships), for comparison.
Eigen::VectorXd tsk_firing_levels(const Eigen::VectorXd& x, const HtskModel& model);

Eigen::VectorXd forward(const Eigen::VectorXd& x, const HtskModel& model);

/// Mean cross-entropy over the given samples; fills grad (flat layout) if non-null.
double cross_entropy(const HtskModel& model, const std::vector<Eigen::VectorXd>& inputs,
                     const std::vector<int>& labels, Eigen::VectorXd* grad = nullptr);

double accuracy(const HtskModel& model, const GraspDataset& data);

struct KMeansOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;
};

/// k-means++ seeding followed by Lloyd iterations. Returns R x M centers.
Eigen::MatrixXd kmeans_init(const GraspDataset& data, int rules, std::mt19937_64& rng,
                            const KMeansOptions& options = {});

/// Centers from kmeans_init, widths from the per-dimension std (floored), zero consequents.
HtskModel init_htsk(const GraspDataset& data, int rules, std::mt19937_64& rng,
                    double width_floor = 1e-3);

struct HtskTrainConfig {
  double lr = 0.04;
  int batch = 64;
  double weight_decay = 1e-8;
  int epochs = 200;
};

struct HtskTrainResult {
  HtskModel model;  // best training accuracy seen
  double best_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean mini-batch loss per epoch
};

HtskTrainResult train(const GraspDataset& data, const HtskModel& model,
                      const HtskTrainConfig& config, std::mt19937_64& rng);

enum class SelectMode { Sample, Argmax };

/// Ties in argmax go to the lowest index.
int select_from(const Eigen::VectorXd& probabilities, SelectMode mode, std::mt19937_64& rng);
int select_grasp(const StateVector& state, const HtskModel& model, SelectMode mode,
                 std::mt19937_64& rng);

}  // namespace clothlab
