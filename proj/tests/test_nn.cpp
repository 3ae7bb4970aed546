#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cathnav/nn.hpp"

using namespace cathnav;

namespace {

// Independent forward pass written out per sample.
Vector reference_forward(const Mlp& net, const Vector& x) {
  Vector a = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Vector z = net.weight(l) * a + net.bias(l);
    if (l + 1 < net.layer_count()) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = z[i] / (1.0 + std::exp(-z[i]));
    }
    a = z;
  }
  return a;
}

double weighted_sum(const Mlp& net, const Matrix& x, const Matrix& c) { return net.forward(x).cwiseProduct(c).sum(); }

}  // namespace

TEST(Mlp, LayoutAndInit) {
  std::mt19937_64 rng(1);
  const Mlp net({5, 8, 3}, rng, 0.1);
  EXPECT_EQ(net.input_size(), 5);
  EXPECT_EQ(net.output_size(), 3);
  EXPECT_EQ(net.layer_count(), 2u);
  EXPECT_EQ(net.parameter_count(), 5u * 8u + 8u + 8u * 3u + 3u);
  // First block of the flat vector is layer 0's column-major weight.
  EXPECT_EQ(net.weight(0)(1, 0), net.params()[1]);
  EXPECT_EQ(net.weight(0)(0, 1), net.params()[8]);
  EXPECT_EQ(net.bias(0)[0], net.params()[40]);
  EXPECT_TRUE(net.bias(0).isZero());
  EXPECT_TRUE(net.bias(1).isZero());
  const double limit0 = std::sqrt(6.0 / (5 + 8));
  EXPECT_LE(net.weight(0).cwiseAbs().maxCoeff(), limit0);
  const double limit1 = 0.1 * std::sqrt(6.0 / (8 + 3));
  EXPECT_LE(net.weight(1).cwiseAbs().maxCoeff(), limit1);
  EXPECT_GT(net.weight(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ForwardMatchesReferenceAndBatches) {
  std::mt19937_64 rng(2);
  Mlp net({4, 6, 6, 2}, rng);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] = 0.5 * n(rng);
  Matrix x(4, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const Matrix y = net.forward(x);
  ASSERT_EQ(y.rows(), 2);
  ASSERT_EQ(y.cols(), 7);
  for (int c = 0; c < 7; ++c) EXPECT_LT((y.col(c) - reference_forward(net, x.col(c))).norm(), 1e-12);
}

TEST(Mlp, ParameterGradientMatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (const auto& sizes : {std::vector<int>{3, 5, 2}, std::vector<int>{30, 16, 16, 1}, std::vector<int>{6, 4, 4, 4, 3}}) {
    Mlp net(sizes, rng);
    for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] += 0.1 * n(rng);
    Matrix x(sizes.front(), 4), c(sizes.back(), 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
    Mlp::Tape tape;
    net.forward(x, &tape);
    Vector grad = Vector::Zero(net.params().size());
    net.backward(tape, c, grad);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < net.params().size(); ++i) {
      Mlp p = net;
      p.params()[i] += h;
      const double up = weighted_sum(p, x, c);
      p.params()[i] -= 2 * h;
      const double down = weighted_sum(p, x, c);
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
    }
  }
}

TEST(Mlp, BackwardAccumulatesAndReturnsInputGradient) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  const Mlp net({4, 7, 2}, rng);
  Matrix x(4, 3), c(2, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
  Mlp::Tape tape;
  net.forward(x, &tape);
  Vector g1 = Vector::Zero(net.params().size());
  const Matrix dx = net.backward(tape, c, g1);
  Vector g2 = g1;
  net.backward(tape, c, g2);
  EXPECT_LT((g2 - 2.0 * g1).norm(), 1e-12);

  ASSERT_EQ(dx.rows(), 4);
  ASSERT_EQ(dx.cols(), 3);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (weighted_sum(net, xp, c) - weighted_sum(net, xm, c)) / (2 * h);
    EXPECT_NEAR(dx.data()[i], fd, 1e-7);
  }
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Adam adam;
  adam.learning_rate = 0.01;
  Vector p(3);
  p << 1.0, -2.0, 0.5;
  Vector g(3);
  g << 4.0, -0.001, 0.0;
  const Vector before = p;
  adam.step(p, g);
  EXPECT_EQ(adam.t, 1);
  // Bias-corrected moments equal g and g^2 after one step.
  for (int i = 0; i < 3; ++i) {
    const double expected = before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p[i], expected, 1e-15);
  }
}

TEST(Adam, SecondStepMatchesHandRecursion) {
  Adam adam;
  adam.learning_rate = 0.1;
  Vector p = Vector::Constant(1, 0.0);
  adam.step(p, Vector::Constant(1, 1.0));
  adam.step(p, Vector::Constant(1, 3.0));
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double p1 = -0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p[0], p1 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(Adam, MinimizesQuadratic) {
  Adam adam;
  adam.learning_rate = 0.05;
  Vector target(4);
  target << 1, -2, 3, 0.5;
  Vector p = Vector::Zero(4);
  for (int i = 0; i < 3000; ++i) adam.step(p, 2.0 * (p - target));
  EXPECT_LT((p - target).norm(), 1e-3);
}
