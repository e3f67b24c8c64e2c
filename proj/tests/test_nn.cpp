#include <doctest.h>

#include "clothlab/errors.hpp"
#include "clothlab/nn.hpp"
#include "fd.hpp"

#include <cmath>

using namespace clothlab;

namespace {

// Scalar loss sum(w .* y) so the upstream gradient is w.
double weighted_output(const DenseNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return (net.forward(x).array() * w.array()).sum();
}

void check_gradients(const NetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DenseNet net(spec, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  // random biases keep pre-activations off the ReLU kink even behind a dead layer
  Eigen::VectorXd p = net.flat();
  for (auto& v : p) v += 0.3 * n(rng);
  net.assign(p);
  Eigen::MatrixXd x(spec.inputs, 3), w(spec.outputs, 3);
  for (auto& v : x.reshaped()) v = n(rng);
  for (auto& v : w.reshaped()) v = n(rng);
  DenseNet::Cache cache;
  net.forward(x, cache);
  const DenseNet::Gradients g = net.backward(cache, w);
  const Eigen::VectorXd analytic = DenseNet::flatten(g);
  const Eigen::VectorXd numeric = testing::numeric_gradient(
      [&](const Eigen::VectorXd& p) {
        DenseNet copy = net;
        copy.assign(p);
        return weighted_output(copy, x, w);
      },
      net.flat(), 1e-5);
  CHECK(testing::max_relative_error(analytic, numeric) < 1e-4);
  const Eigen::VectorXd gin = testing::numeric_gradient(
      [&](const Eigen::VectorXd& v) {
        return weighted_output(net, v.reshaped(spec.inputs, 3), w);
      },
      x.reshaped(), 1e-5);
  CHECK(testing::max_relative_error(g.input.reshaped(), gin) < 1e-4);
}

}  // namespace

TEST_CASE("identity linear layer") {
  const DenseNet net({Eigen::MatrixXd::Identity(3, 3)}, {Eigen::VectorXd::Zero(3)},
                     OutputActivation::Linear);
  const Eigen::Vector3d x(1.0, -2.0, 0.5);
  CHECK(net.forward(Eigen::VectorXd(x)) == Eigen::VectorXd(x));
}

TEST_CASE("bias-free ReLU net maps zero to zero") {
  std::mt19937_64 rng(1);
  const DenseNet net({4, 2, 3, 8, false, OutputActivation::Tanh}, rng);
  CHECK(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(4))).norm() == 0.0);
}

TEST_CASE("backward matches central differences") {
  check_gradients({5, 3, 2, 7, false, OutputActivation::Linear}, 1);
  check_gradients({4, 2, 2, 6, false, OutputActivation::Tanh}, 2);
  check_gradients({3, 1, 11, 5, true, OutputActivation::Linear}, 3);
}

TEST_CASE("shapes and parameter count") {
  std::mt19937_64 rng(1);
  const DenseNet actor({17, 6, 50, 16, false, OutputActivation::Tanh}, rng);
  CHECK(actor.layer_count() == 51);
  CHECK(actor.parameter_count() == 17 * 16 + 16 + 49 * (16 * 16 + 16) + 16 * 6 + 6);
  CHECK(actor.parameter_count() <= 14183);
  const DenseNet critic({23, 1, 50, 16, false, OutputActivation::Linear}, rng);
  CHECK(critic.parameter_count() <= 14183);
  CHECK_THROWS_AS(actor.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(5))), PreconditionError);
  Eigen::VectorXd p = actor.flat();
  CHECK(p.size() == actor.parameter_count());
  CHECK_THROWS_AS(const_cast<DenseNet&>(actor).assign(Eigen::VectorXd::Zero(3)), PreconditionError);
}

TEST_CASE("adam") {
  AdamState st;
  Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 2.0);
  adam_step(p, Eigen::VectorXd::Zero(3), st, 0.1);
  CHECK(p == Eigen::VectorXd::Constant(3, 2.0));

  AdamState s1;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
  adam_step(x, Eigen::VectorXd::Constant(1, 3.0), s1, 0.01);
  CHECK(std::abs(x[0] - 0.99) == doctest::Approx(0.0).epsilon(1e-6));

  AdamState s2;
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 1.0);
  for (int k = 0; k < 500; ++k) adam_step(q, q, s2, 0.01);
  CHECK(std::abs(q[0]) < 1e-3);

  AdamState s3;
  Eigen::VectorXd r = Eigen::VectorXd::Constant(1, 1.0);
  adam_step(r, Eigen::VectorXd::Zero(1), s3, 0.01, 0.5);
  CHECK(r[0] < 1.0);
}

TEST_CASE("soft update") {
  std::mt19937_64 rng(4);
  const NetSpec s{3, 2, 2, 4, false, OutputActivation::Linear};
  const DenseNet source(s, rng);
  DenseNet target(s, rng);
  const DenseNet before = target;
  soft_update(target, source, 0.0);
  CHECK(target.flat() == before.flat());
  soft_update(target, source, 1.0);
  CHECK(target.flat() == source.flat());

  DenseNet t2 = before;
  double prev = (t2.flat() - source.flat()).norm();
  for (int k = 0; k < 20; ++k) {
    soft_update(t2, source, 0.3);
    const double gap = (t2.flat() - source.flat()).norm();
    CHECK(gap == doctest::Approx(0.7 * prev).epsilon(1e-9));
    prev = gap;
  }
  const DenseNet other({3, 2, 3, 4, false, OutputActivation::Linear}, rng);
  CHECK_THROWS_AS(soft_update(t2, other, 0.5), PreconditionError);
}
