#include "csgva/verify.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace csgva;
using namespace csgva::verify;

TEST(FdGradient, QuadraticIsExact) {
  const Vector g = fd_gradient([](const Vector& x) { return x.squaredNorm(); }, (Vector(2) << 1, 2).finished());
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FdGradient, SecondDegreePolynomials) {
  std::mt19937_64 rng(1);
  const Matrix A = csgva::testing::randn(4, 4, rng);
  const Vector b = csgva::testing::randn(4, rng);
  const Vector x = csgva::testing::randn(4, rng);
  auto f = [&](const Vector& v) { return 0.5 * v.dot(A * v) + b.dot(v) + 3.0; };
  const Vector expected = 0.5 * (A + A.transpose()) * x + b;
  EXPECT_LT((fd_gradient(f, x) - expected).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(FdGradient, ConstantGivesZero) {
  EXPECT_TRUE(fd_gradient([](const Vector&) { return 7.0; }, Vector::Ones(3)).isZero(0.0));
}

TEST(FdGradient, NonFiniteProbeReportsCoordinate) {
  auto f = [](const Vector& x) { return x[1] > 0.0 ? std::log(x[1]) : NAN; };
  try {
    fd_gradient(f, (Vector(2) << 1.0, 1e-6).finished());
    FAIL() << "expected OracleFailure";
  } catch (const OracleFailure& e) {
    EXPECT_EQ(e.coordinate(), 1);
  }
  EXPECT_THROW(fd_gradient(f, Vector::Ones(2), FDSpec{0.0}), std::invalid_argument);
}

TEST(Compare, RelativeWithAbsoluteFloor) {
  const Vector a = (Vector(2) << 1.0, 1e-12).finished();
  EXPECT_TRUE(compare(a, (Vector(2) << 1.0 + 5e-7, 5e-9).finished(), 1e-6, 1e-8).pass);
  const auto bad = compare(a, (Vector(2) << 1.0 + 5e-6, 0.0).finished(), 1e-6, 1e-8);
  EXPECT_FALSE(bad.pass);
  EXPECT_EQ(bad.worst, 0);
}

TEST(DenseGaussian, StandardNormalAtOrigin) {
  EXPECT_NEAR(dense_gaussian_logpdf(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2)),
              -std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_THROW(dense_gaussian_logpdf(Vector::Zero(1), Matrix::Zero(1, 1), Vector::Zero(1)), std::domain_error);
}

TEST(DenseGaussian, IntegratesToOneIn1D) {
  const Matrix T = (Matrix(1, 1) << 1.7).finished();
  const Vector mean = (Vector(1) << 0.3).finished();
  double acc = 0.0;
  const double h = 1e-3;
  for (double x = -10.0; x <= 10.0; x += h) acc += std::exp(dense_gaussian_logpdf(mean, T, (Vector(1) << x).finished()));
  EXPECT_NEAR(acc * h, 1.0, 1e-6);
}

TEST(DenseGaussian, AgreesWithGaussianModeFamily) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto lambda = csgva::testing::random_lambda({2, 3, 1, 1}, rng, 0.3, true);
    const auto target = csgva::testing::matched_target(lambda);
    const Draw draw = reparam(lambda, csgva::testing::randn(5, rng));
    const Matrix T = target.precision().llt().matrixL();
    EXPECT_NEAR(log_density(lambda, draw), dense_gaussian_logpdf(target.mean(), T, draw.theta()), 1e-10);
    // Gaussian score -Omega (theta - mu).
    EXPECT_LT((grad_theta_log_density(lambda, draw) - target.gradient(draw.theta())).norm(), 1e-10);
  }
}

TEST(DenseFactor, EnumeratesColumnMajorDiagonalDown) {
  const Vector star = (Vector(5) << 0.0, 2.0, std::log(3.0), 4.0, std::log(5.0)).finished();
  const Matrix C = dense_factor_from_star(star, 3, 1, 1);
  EXPECT_DOUBLE_EQ(C(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(C(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(C(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(C(2, 1), 4.0);
  EXPECT_DOUBLE_EQ(C(2, 2), 5.0);
  EXPECT_EQ(C(2, 0), 0.0);
  EXPECT_THROW(dense_factor_from_star(Vector::Zero(4), 3, 1, 1), std::invalid_argument);
}

TEST(McMeanTest, PassesOnCorrectMean) {
  std::mt19937_64 rng(3);
  const Matrix samples = csgva::testing::randn(100000, 2, rng);
  const auto t = mc_mean_test(samples, Vector::Zero(2));
  EXPECT_TRUE(t.pass) << t.max_abs_z;
}

TEST(McMeanTest, DetectsBias) {
  std::mt19937_64 rng(4);
  Matrix samples = csgva::testing::randn(100000, 1, rng);
  samples.array() += 0.1;
  const auto t = mc_mean_test(samples, Vector::Zero(1));
  EXPECT_FALSE(t.pass);
  EXPECT_GT(t.max_abs_z, 20.0);
  EXPECT_THROW(mc_mean_test(Matrix::Zero(10, 1), Vector::Zero(1)), std::invalid_argument);
}

TEST(Simpson2d, IntegratesPolynomialsExactly) {
  EXPECT_NEAR(simpson_2d([](double x, double y) { return x * x * y + 1.0; }, 0.0, 1.0, 4), 1.0 + 1.0 / 6.0, 1e-14);
}
