#pragma once

// Small dense networks on column-batched inputs, exact backward, Adam and
// Polyak averaging.

#include <Eigen/Core>

#include <random>
#include <vector>

namespace clothlab {

enum class OutputActivation { Linear, Tanh };

struct NetSpec {
  int inputs = 1;
  int outputs = 1;
  int hidden_layers = 50;
  int hidden_width = 16;
  bool residual = false;  // skip connection every 5 hidden layers
  OutputActivation output = OutputActivation::Linear;
};

class DenseNet {
 public:
  DenseNet() = default;
  /// He-normal weights, zero biases.
  DenseNet(const NetSpec& spec, std::mt19937_64& rng);
  /// Explicit layers; hidden activations are ReLU.
  DenseNet(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
           OutputActivation output, bool residual = false);

  struct Cache {
    std::vector<Eigen::MatrixXd> pre;  // z_l, l = 1..L
    std::vector<Eigen::MatrixXd> act;  // a_0 = x, a_l
  };

  struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Eigen::MatrixXd input;  // dL/dx, same shape as the forward input
  };

  /// x is inputs x batch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  /// upstream is dL/dy (outputs x batch).
  Gradients backward(const Cache& cache, const Eigen::MatrixXd& upstream) const;

  int layer_count() const { return static_cast<int>(weights_.size()); }
  int input_size() const;
  int output_size() const;
  std::vector<int> layer_sizes() const;
  long parameter_count() const;
  bool residual() const { return residual_; }
  OutputActivation output_activation() const { return output_; }

  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  /// Weights then bias per layer, column-major.
  Eigen::VectorXd flat() const;
  void assign(const Eigen::VectorXd& params);
  static Eigen::VectorXd flatten(const Gradients& g);

 private:
  bool skips_into(int layer) const;

  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  OutputActivation output_ = OutputActivation::Linear;
  bool residual_ = false;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam; weight decay is added to the gradient (L2).
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               double weight_decay = 0.0);

/// target <- tau * source + (1 - tau) * target.
void soft_update(DenseNet& target, const DenseNet& source, double tau);

}  // namespace clothlab
