#include "clothlab/htsk.hpp"

#include "clothlab/errors.hpp"
#include "clothlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace clothlab {

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

// Per-rule mean log-membership.
Eigen::VectorXd mean_log_membership(const Eigen::VectorXd& x, const HtskModel& m) {
  if (x.size() != m.inputs()) {
    throw PreconditionError("HTSK input has " + std::to_string(x.size()) + " dims, model expects " +
                            std::to_string(m.inputs()));
  }
  const Eigen::ArrayXXd d = m.centers.rowwise() - x.transpose();
  const Eigen::ArrayXXd inv_var = (-2.0 * m.log_widths.array()).exp();
  return -(d.square() * inv_var).rowwise().sum() / (2.0 * m.inputs());
}

}  // namespace

Eigen::VectorXd HtskModel::flat() const {
  Eigen::VectorXd p(centers.size() + log_widths.size() + consequents.size());
  p << centers.reshaped(), log_widths.reshaped(), consequents.reshaped();
  return p;
}

void HtskModel::assign(const Eigen::VectorXd& params) {
  const Eigen::Index a = centers.size(), b = log_widths.size(), c = consequents.size();
  if (params.size() != a + b + c) throw PreconditionError("HtskModel::assign: size mismatch");
  centers.reshaped() = params.segment(0, a);
  log_widths.reshaped() = params.segment(a, b);
  consequents.reshaped() = params.segment(a + b, c);
}

void HtskModel::validate() const {
  if (rules() < 1 || inputs() < 1 || classes() < 1) throw PreconditionError("HtskModel: empty");
  if (log_widths.rows() != centers.rows() || log_widths.cols() != centers.cols() ||
      consequents.rows() != centers.rows()) {
    throw PreconditionError("HtskModel: parameter shapes disagree");
  }
  if (!flat().allFinite()) throw PreconditionError("HtskModel: non-finite parameter");
}

void GraspDataset::validate() const {
  if (inputs.size() != labels.size()) throw PreconditionError("GraspDataset: size mismatch");
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= classes) {
      throw PreconditionError("GraspDataset: label " + std::to_string(labels[n]) + " out of range");
    }
    if (inputs[n].size() != inputs.front().size()) {
      throw PreconditionError("GraspDataset: inconsistent input dimension");
    }
  }
}

Eigen::VectorXd firing_levels(const Eigen::VectorXd& x, const HtskModel& model) {
  return softmax(mean_log_membership(x, model));
}

Eigen::VectorXd tsk_firing_levels(const Eigen::VectorXd& x, const HtskModel& model) {
  return softmax(model.inputs() * mean_log_membership(x, model));
}

Eigen::VectorXd forward(const Eigen::VectorXd& x, const HtskModel& model) {
  const Eigen::VectorXd w = firing_levels(x, model);
  return softmax(model.consequents.transpose() * w);
}

double cross_entropy(const HtskModel& model, const std::vector<Eigen::VectorXd>& inputs,
                     const std::vector<int>& labels, Eigen::VectorXd* grad) {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw PreconditionError("cross_entropy: need matching non-empty inputs and labels");
  }
  const int R = model.rules(), M = model.inputs(), K = model.classes();
  Eigen::MatrixXd gc = Eigen::MatrixXd::Zero(R, M);
  Eigen::MatrixXd gl = Eigen::MatrixXd::Zero(R, M);
  Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(R, K);
  const Eigen::ArrayXXd inv_var = (-2.0 * model.log_widths.array()).exp();
  double loss = 0.0;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const Eigen::VectorXd w = firing_levels(inputs[n], model);
    const Eigen::VectorXd scores = model.consequents.transpose() * w;
    const Eigen::VectorXd p = softmax(scores);
    const int y = labels[n];
    // log-softmax directly for stability
    const double lse = scores.maxCoeff() + std::log((scores.array() - scores.maxCoeff()).exp().sum());
    loss += lse - scores[y];
    if (!grad) continue;
    Eigen::VectorXd ds = p;
    ds[y] -= 1.0;
    gw += w * ds.transpose();
    const Eigen::VectorXd dw = model.consequents * ds;
    const Eigen::VectorXd dh = w.array() * (dw.array() - w.dot(dw));
    const Eigen::ArrayXXd diff = (-(model.centers.rowwise() - inputs[n].transpose())).array();
    gc.array() += (diff * inv_var).colwise() * dh.array() / M;
    gl.array() += (diff.square() * inv_var).colwise() * dh.array() / M;
  }
  const double scale = 1.0 / static_cast<double>(inputs.size());
  if (grad) {
    grad->resize(gc.size() + gl.size() + gw.size());
    *grad << gc.reshaped(), gl.reshaped(), gw.reshaped();
    *grad *= scale;
  }
  return loss * scale;
}

double accuracy(const HtskModel& model, const GraspDataset& data) {
  if (data.size() == 0) return 0.0;
  std::mt19937_64 unused(0);
  int hits = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (select_from(forward(data.inputs[n], model), SelectMode::Argmax, unused) == data.labels[n]) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Eigen::MatrixXd kmeans_init(const GraspDataset& data, int rules, std::mt19937_64& rng,
                            const KMeansOptions& options) {
  const int N = static_cast<int>(data.size());
  if (N == 0) throw PreconditionError("kmeans_init: empty dataset");
  if (rules < 1 || rules > N) {
    throw PreconditionError("kmeans_init: R = " + std::to_string(rules) + " but only " +
                            std::to_string(N) + " samples");
  }
  const int M = static_cast<int>(data.inputs.front().size());
  Eigen::MatrixXd X(N, M);
  for (int n = 0; n < N; ++n) X.row(n) = data.inputs[n].transpose();

  // k-means++ seeding
  Eigen::MatrixXd C(rules, M);
  std::uniform_int_distribution<int> first(0, N - 1);
  C.row(0) = X.row(first(rng));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 1; r < rules; ++r) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      double u = unit(rng) * total;
      pick = N - 1;
      for (int n = 0; n < N; ++n) {
        u -= d2[n];
        if (u < 0.0) {
          pick = n;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    C.row(r) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - C.row(r)).rowwise().squaredNorm());
  }

  std::vector<int> assign(N, 0);
  for (int it = 0; it < options.max_iterations; ++it) {
    for (int n = 0; n < N; ++n) {
      Eigen::Index best = 0;
      (C.rowwise() - X.row(n)).rowwise().squaredNorm().minCoeff(&best);
      assign[n] = static_cast<int>(best);
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(rules, M);
    std::vector<int> count(rules, 0);
    for (int n = 0; n < N; ++n) {
      next.row(assign[n]) += X.row(n);
      ++count[assign[n]];
    }
    for (int r = 0; r < rules; ++r) {
      if (count[r] > 0) {
        next.row(r) /= count[r];
      } else {
        // empty cluster: move it to the worst-fit sample
        Eigen::Index far = 0;
        Eigen::VectorXd fit(N);
        for (int n = 0; n < N; ++n) fit[n] = (X.row(n) - C.row(assign[n])).squaredNorm();
        fit.maxCoeff(&far);
        next.row(r) = X.row(far);
      }
    }
    const double shift = (next - C).rowwise().norm().maxCoeff();
    C = std::move(next);
    if (shift < options.tolerance) break;
  }
  return C;
}

HtskModel init_htsk(const GraspDataset& data, int rules, std::mt19937_64& rng, double width_floor) {
  data.validate();
  HtskModel m;
  m.centers = kmeans_init(data, rules, rng);
  const int N = static_cast<int>(data.size());
  const int M = m.inputs();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(M);
  for (const auto& x : data.inputs) mean += x;
  mean /= N;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(M);
  for (const auto& x : data.inputs) var += (x - mean).cwiseAbs2();
  const Eigen::VectorXd sd = (var / N).cwiseSqrt().cwiseMax(width_floor);
  m.log_widths = sd.array().log().matrix().transpose().replicate(rules, 1);
  m.consequents = Eigen::MatrixXd::Zero(rules, data.classes);
  return m;
}

HtskTrainResult train(const GraspDataset& data, const HtskModel& model,
                      const HtskTrainConfig& config, std::mt19937_64& rng) {
  if (data.size() == 0) throw PreconditionError("HTSK train: empty dataset");
  data.validate();
  model.validate();
  if (model.classes() != data.classes || model.inputs() != data.inputs.front().size()) {
    throw PreconditionError("HTSK train: model shape does not match the dataset");
  }
  if (config.batch < 1 || config.epochs < 0) throw PreconditionError("HTSK train: bad batch/epochs");

  HtskTrainResult out;
  out.model = model;
  out.best_accuracy = accuracy(model, data);
  HtskModel current = model;
  Eigen::VectorXd params = current.flat();
  AdamState adam;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::VectorXd> xb;
  std::vector<int> yb;
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t s = 0; s < order.size(); s += config.batch) {
      const std::size_t e = std::min(order.size(), s + config.batch);
      xb.clear();
      yb.clear();
      for (std::size_t q = s; q < e; ++q) {
        xb.push_back(data.inputs[order[q]]);
        yb.push_back(data.labels[order[q]]);
      }
      loss_sum += cross_entropy(current, xb, yb, &grad);
      ++batches;
      adam_step(params, grad, adam, config.lr, config.weight_decay);
      current.assign(params);
    }
    out.epoch_loss.push_back(loss_sum / batches);
    const double acc = accuracy(current, data);
    if (acc > out.best_accuracy) {
      out.best_accuracy = acc;
      out.model = current;
    }
  }
  return out;
}

int select_from(const Eigen::VectorXd& probabilities, SelectMode mode, std::mt19937_64& rng) {
  if (probabilities.size() == 0) throw PreconditionError("select_from: empty distribution");
  if (mode == SelectMode::Argmax) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probabilities.size(); ++i) {
      if (probabilities[i] > probabilities[best]) best = i;
    }
    return static_cast<int>(best);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng) * probabilities.sum();
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    u -= probabilities[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  // rounding: last class with non-zero mass
  for (Eigen::Index i = probabilities.size() - 1; i > 0; --i) {
    if (probabilities[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

int select_grasp(const StateVector& state, const HtskModel& model, SelectMode mode,
                 std::mt19937_64& rng) {
  return select_from(forward(state.values, model), mode, rng);
}

}  // namespace clothlab
