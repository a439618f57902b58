#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace m2ru;
using m2ru::testing::random_example;
using m2ru::testing::small_net;

namespace {

NetworkParams scalar_net(double w, double u, double b, double beta, double lambda) {
  NetworkParams p;
  p.input_weights = Matrix(1, 1, w);
  p.recurrent_weights = Matrix(1, 1, u);
  p.readout_weights = Matrix(1, 1, 1.0);
  p.hidden_bias = {b};
  p.readout_bias = {0.0};
  p.reset = beta;
  p.update = lambda;
  p.feedback = std::make_shared<const Matrix>(1, 1, 1.0);
  return p;
}

}  // namespace

TEST(ForwardStep, ZeroParamsGiveZeroState) {
  NetworkParams p = init_network({3, 4, 2, 1}, 0.5, 0.5, 1, 2);
  p.input_weights.fill(0.0);
  p.recurrent_weights.fill(0.0);
  const StepState s = forward_step(p, Vector(3, 0.0), Vector(4, 0.0));
  for (double v : s.h) EXPECT_EQ(v, 0.0);
}

TEST(ForwardStep, LambdaOneHoldsState) {
  NetworkParams p = small_net(3, 4, 2, 11, 0.5, 1.0);
  const Vector h_prev{0.3, -0.2, 0.7, 0.0};
  const StepState s = forward_step(p, Vector{0.9, 0.1, 0.4}, h_prev);
  EXPECT_EQ(s.h, h_prev);
}

TEST(ForwardStep, HandEvaluatedScalarCase) {
  const NetworkParams p = scalar_net(1.0, 1.0, 0.0, 0.5, 0.5);
  const StepState s = forward_step(p, Vector{0.5}, Vector{0.2});
  EXPECT_NEAR(s.preact[0], 0.6, 1e-15);
  EXPECT_NEAR(s.candidate[0], 0.5370495669980353, 1e-12);
  EXPECT_NEAR(s.h[0], 0.5 * 0.2 + 0.5 * std::tanh(0.6), 1e-15);
}

TEST(ForwardStep, LambdaZeroIsCandidate) {
  NetworkParams p = small_net(3, 5, 2, 4, 0.5, 0.0);
  const StepState s = forward_step(p, Vector{0.2, 0.4, 0.6}, Vector{0.1, -0.3, 0.5, 0.2, -0.9});
  EXPECT_EQ(s.h, s.candidate);
}

TEST(ForwardStep, BetaZeroIgnoresPreviousState) {
  NetworkParams p = small_net(3, 5, 2, 4, 0.0, 0.5);
  const Vector x{0.2, 0.4, 0.6};
  const StepState a = forward_step(p, x, Vector{0.1, -0.3, 0.5, 0.2, -0.9});
  const StepState b = forward_step(p, x, Vector{-0.8, 0.3, 0.0, 0.9, 0.4});
  EXPECT_EQ(a.preact, b.preact);
}

TEST(ForwardStep, ShapeAndFiniteChecks) {
  NetworkParams p = small_net(3, 4, 2, 5);
  EXPECT_THROW(forward_step(p, Vector(2, 0.0), Vector(4, 0.0)), DimensionError);
  EXPECT_THROW(forward_step(p, Vector(3, 0.0), Vector(5, 0.0)), DimensionError);
  EXPECT_THROW(forward_step(p, Vector{0.0, NAN, 0.0}, Vector(4, 0.0)), NumericError);
  EXPECT_THROW(forward_step(p, Vector(3, 0.0), Vector{0, INFINITY, 0, 0}), NumericError);
}

TEST(ForwardSequence, ZeroReadoutIsUniform) {
  NetworkParams p = init_network({4, 6, 10, 1}, 0.5, 0.5, 3, 4);
  p.readout_weights.fill(0.0);
  XorShift32 rng(9);
  const auto r = forward_sequence(p, m2ru::testing::random_matrix(5, 4, 0, 1, rng));
  for (double v : r.y_hat) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(ForwardSequence, SingleStepIsForwardStepThenSoftmax) {
  NetworkParams p = small_net(3, 4, 2, 21);
  const Matrix x(1, 3, 0.25);
  const auto r = forward_sequence(p, x);
  const StepState s = forward_step(p, x.row(0), Vector(4, 0.0));
  EXPECT_EQ(Vector(r.trace.h.row(0).begin(), r.trace.h.row(0).end()), s.h);
  EXPECT_EQ(r.y_hat, softmax(readout_logits(p, s.h)));
}

TEST(ForwardSequence, MatchesManualRecursion) {
  const NetworkParams p = small_net(3, 4, 2, 31, 0.6, 0.3);
  XorShift32 rng(77);
  const Matrix x = m2ru::testing::random_matrix(5, 3, 0, 1, rng);
  const auto r = forward_sequence(p, x);

  // Written out with plain loops and no library helpers.
  double h[4] = {0, 0, 0, 0};
  for (int t = 0; t < 5; ++t) {
    double next[4];
    for (int j = 0; j < 4; ++j) {
      double a = p.hidden_bias[j];
      for (int i = 0; i < 3; ++i) a += x(t, i) * p.input_weights(i, j);
      for (int i = 0; i < 4; ++i) a += p.reset * h[i] * p.recurrent_weights(i, j);
      next[j] = p.update * h[j] + (1 - p.update) * std::tanh(a);
      EXPECT_NEAR(r.trace.preact(t, j), a, 1e-14);
    }
    for (int j = 0; j < 4; ++j) {
      h[j] = next[j];
      EXPECT_NEAR(r.trace.h(t, j), h[j], 1e-14);
    }
  }
  double z[2], zmax = -1e300, sum = 0;
  for (int k = 0; k < 2; ++k) {
    z[k] = p.readout_bias[k];
    for (int j = 0; j < 4; ++j) z[k] += h[j] * p.readout_weights(j, k);
    zmax = std::max(zmax, z[k]);
  }
  for (double& v : z) sum += (v = std::exp(v - zmax));
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(r.y_hat[k], z[k] / sum, 1e-14);
}

TEST(ForwardSequence, StatesBoundedAndDeterministic) {
  NetworkParams p = small_net(6, 8, 3, 41);
  for (double& w : p.input_weights.flat()) w *= 20.0;
  XorShift32 rng(5);
  const Matrix x = m2ru::testing::random_matrix(30, 6, 0, 1, rng);
  const auto a = forward_sequence(p, x);
  const auto b = forward_sequence(p, x);
  EXPECT_TRUE(a.trace == b.trace);
  EXPECT_EQ(a.y_hat, b.y_hat);
  for (double v : a.trace.h.flat()) {
    EXPECT_LT(v, 1.0);
    EXPECT_GT(v, -1.0);
  }
  double total = 0;
  for (double v : a.y_hat) total += v;
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(ForwardSequence, RejectsEmptyAndMisshapen) {
  const NetworkParams p = small_net(3, 4, 2, 5);
  EXPECT_THROW(forward_sequence(p, Matrix(0, 3)), DimensionError);
  EXPECT_THROW(forward_sequence(p, Matrix(2, 4)), DimensionError);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Vector{0, 0}), (Vector{0.5, 0.5}));
  EXPECT_EQ(softmax(Vector{1000, 1000}), (Vector{0.5, 0.5}));
  const Vector s = softmax(Vector{1, 2, 3});
  EXPECT_NEAR(s[0], 0.09003, 1e-5);
  EXPECT_NEAR(s[1], 0.24473, 1e-5);
  EXPECT_NEAR(s[2], 0.66524, 1e-5);
  EXPECT_THROW(softmax(Vector{}), DimensionError);
}

TEST(Softmax, ShiftInvariant) {
  XorShift32 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector v(7);
    for (double& x : v) x = rng.uniform(-5, 5);
    Vector w = v;
    const double c = rng.uniform(-100, 100);
    for (double& x : w) x += c;
    const Vector a = softmax(v), b = softmax(w);
    EXPECT_EQ(argmax(a), argmax(b));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(NetworkParams, ValidateRejectsBadCoefficients) {
  NetworkParams p = small_net(2, 3, 2, 1);
  p.reset = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_net(2, 3, 2, 1);
  p.input_weights(0, 0) = NAN;
  EXPECT_THROW(p.validate(), NumericError);
}

TEST(NetworkParams, InitIsSeededAndBounded) {
  const NetworkParams a = init_network({5, 7, 3, 1}, 0.5, 0.5, 10, 20);
  const NetworkParams b = init_network({5, 7, 3, 1}, 0.5, 0.5, 10, 20);
  const NetworkParams c = init_network({5, 7, 3, 1}, 0.5, 0.5, 11, 20);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  for (double w : a.input_weights.flat()) EXPECT_LE(std::abs(w), 1 / std::sqrt(5.0));
  for (double w : a.feedback_matrix().flat()) EXPECT_LE(std::abs(w), 1 / std::sqrt(3.0));
}

TEST(OneHot, RejectsOutOfRange) {
  EXPECT_EQ(one_hot(2, 4), (Vector{0, 0, 1, 0}));
  EXPECT_THROW(one_hot(4, 4), DomainError);
}
