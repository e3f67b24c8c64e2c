#include "clothlab/nn.hpp"

#include "clothlab/errors.hpp"

#include <cmath>

namespace clothlab {

DenseNet::DenseNet(const NetSpec& spec, std::mt19937_64& rng)
    : output_(spec.output), residual_(spec.residual) {
  if (spec.inputs < 1 || spec.outputs < 1 || spec.hidden_layers < 0 || spec.hidden_width < 1) {
    throw PreconditionError("NetSpec: layer sizes must be positive");
  }
  std::vector<int> sizes{spec.inputs};
  for (int l = 0; l < spec.hidden_layers; ++l) sizes.push_back(spec.hidden_width);
  sizes.push_back(spec.outputs);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const bool last = l + 1 == sizes.size();
    // He for ReLU layers, Glorot-like for the output.
    const double scale = last ? std::sqrt(1.0 / sizes[l - 1]) : std::sqrt(2.0 / sizes[l - 1]);
    Eigen::MatrixXd w(sizes[l], sizes[l - 1]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(sizes[l]));
  }
  // residual blocks start as identity maps
  for (int l = 1; l <= layer_count(); ++l) {
    if (skips_into(l)) weights_[l - 1].setZero();
  }
}

DenseNet::DenseNet(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
                   OutputActivation output, bool residual)
    : weights_(std::move(weights)), biases_(std::move(biases)), output_(output), residual_(residual) {
  if (weights_.empty() || weights_.size() != biases_.size()) {
    throw PreconditionError("DenseNet: need one bias per weight matrix");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (biases_[l].size() != weights_[l].rows() ||
        (l > 0 && weights_[l].cols() != weights_[l - 1].rows())) {
      throw PreconditionError("DenseNet: layer " + std::to_string(l) + " shape does not chain");
    }
  }
}

int DenseNet::input_size() const { return weights_.empty() ? 0 : weights_.front().cols(); }
int DenseNet::output_size() const { return weights_.empty() ? 0 : weights_.back().rows(); }

std::vector<int> DenseNet::layer_sizes() const {
  std::vector<int> s;
  if (weights_.empty()) return s;
  s.push_back(input_size());
  for (const auto& w : weights_) s.push_back(w.rows());
  return s;
}

long DenseNet::parameter_count() const {
  long n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

bool DenseNet::skips_into(int layer) const {
  // layer is 1-based; only hidden layers receive skips.
  if (!residual_ || layer % 5 != 0 || layer - 5 < 1 || layer >= layer_count()) return false;
  return weights_[layer - 1].rows() == weights_[layer - 6].rows();
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x) const {
  Cache cache;
  return forward(x, cache);
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x, Cache& cache) const {
  if (x.rows() != input_size()) {
    throw PreconditionError("DenseNet::forward: expected " + std::to_string(input_size()) +
                            " inputs, got " + std::to_string(x.rows()));
  }
  const int L = layer_count();
  cache.pre.assign(L + 1, Eigen::MatrixXd());
  cache.act.assign(L + 1, Eigen::MatrixXd());
  cache.act[0] = x;
  for (int l = 1; l <= L; ++l) {
    Eigen::MatrixXd z = weights_[l - 1] * cache.act[l - 1];
    z.colwise() += biases_[l - 1];
    Eigen::MatrixXd a;
    if (l < L) {
      a = z.cwiseMax(0.0);
      if (skips_into(l)) a += cache.act[l - 5];
    } else {
      a = output_ == OutputActivation::Tanh ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    cache.pre[l] = std::move(z);
    cache.act[l] = std::move(a);
  }
  return cache.act[L];
}

DenseNet::Gradients DenseNet::backward(const Cache& cache, const Eigen::MatrixXd& upstream) const {
  const int L = layer_count();
  if (static_cast<int>(cache.act.size()) != L + 1 || upstream.rows() != output_size() ||
      upstream.cols() != cache.act[L].cols()) {
    throw PreconditionError("DenseNet::backward: upstream shape does not match the cache");
  }
  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);
  std::vector<Eigen::MatrixXd> ga(L + 1);
  for (int l = 0; l <= L; ++l) ga[l] = Eigen::MatrixXd::Zero(cache.act[l].rows(), cache.act[l].cols());
  ga[L] = upstream;
  for (int l = L; l >= 1; --l) {
    Eigen::MatrixXd delta;
    if (l < L) {
      delta = (cache.pre[l].array() > 0.0).cast<double>() * ga[l].array();
      if (skips_into(l)) ga[l - 5] += ga[l];
    } else if (output_ == OutputActivation::Tanh) {
      delta = (1.0 - cache.act[L].array().square()) * ga[L].array();
    } else {
      delta = ga[L];
    }
    g.weights[l - 1] = delta * cache.act[l - 1].transpose();
    g.biases[l - 1] = delta.rowwise().sum();
    ga[l - 1] += weights_[l - 1].transpose() * delta;
  }
  g.input = std::move(ga[0]);
  return g;
}

Eigen::VectorXd DenseNet::flat() const {
  Eigen::VectorXd p(parameter_count());
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.segment(o, weights_[l].size()) = weights_[l].reshaped();
    o += weights_[l].size();
    p.segment(o, biases_[l].size()) = biases_[l];
    o += biases_[l].size();
  }
  return p;
}

void DenseNet::assign(const Eigen::VectorXd& params) {
  if (params.size() != parameter_count()) {
    throw PreconditionError("DenseNet::assign: expected " + std::to_string(parameter_count()) +
                            " parameters, got " + std::to_string(params.size()));
  }
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l].reshaped() = params.segment(o, weights_[l].size());
    o += weights_[l].size();
    biases_[l] = params.segment(o, biases_[l].size());
    o += biases_[l].size();
  }
}

Eigen::VectorXd DenseNet::flatten(const Gradients& g) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) n += g.weights[l].size() + g.biases[l].size();
  Eigen::VectorXd p(n);
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    p.segment(o, g.weights[l].size()) = g.weights[l].reshaped();
    o += g.weights[l].size();
    p.segment(o, g.biases[l].size()) = g.biases[l];
    o += g.biases[l].size();
  }
  return p;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               double weight_decay) {
  if (grads.size() != params.size()) throw PreconditionError("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.t = 0;
  }
  const Eigen::VectorXd g = grads + weight_decay * params;
  ++state.t;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

void soft_update(DenseNet& target, const DenseNet& source, double tau) {
  if (target.layer_sizes() != source.layer_sizes()) {
    throw PreconditionError("soft_update: architectures differ");
  }
  target.assign(tau * source.flat() + (1.0 - tau) * target.flat());
}

}  // namespace clothlab
