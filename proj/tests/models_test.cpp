#include "csgva/models.hpp"
#include "csgva/verify.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace csgva;
using csgva::testing::randn;
using csgva::testing::toy_glmm_data;
using csgva::testing::toy_svm_data;

namespace {

constexpr verify::FDSpec kFD{1e-5, 1e-6, 1e-8};

GlmmData single_subject(double y, GlmmFamily family) {
  GlmmData d;
  d.family = family;
  d.fixed_names = {"(Intercept)"};
  d.random_cols = {0};
  GlmmSubject s;
  s.y = Vector::Constant(1, y);
  s.X = Matrix::Ones(1, 1);
  d.subjects.push_back(s);
  return d;
}

/// H(i, j) by central differences of the gradient.
double fd_hessian_entry(const std::function<Vector(const Vector&)>& grad, const Vector& x, Index i,
                        Index j, double h = 1e-5) {
  Vector up = x, down = x;
  up[j] += h;
  down[j] -= h;
  return (grad(up)[i] - grad(down)[i]) / (2.0 * h);
}

}  // namespace

TEST(Glmm, SingleSubjectPoissonAtZero) {
  const Glmm model(single_subject(0.0, GlmmFamily::poisson_log));
  EXPECT_EQ(model.dims(), (ModelDims{2, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(model.log_joint(Vector::Zero(3)), -1.0);
  // d/d b~ of -exp(eta) is -1; beta only enters through the zero quadratic.
  const Vector g = model.gradient(Vector::Zero(3));
  EXPECT_DOUBLE_EQ(g[2], -1.0);
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);  // n vech(I_L)
}

TEST(Glmm, BernoulliAtZeroIsMinusLog2PerObservation) {
  for (double y : {0.0, 1.0}) {
    const Glmm model(single_subject(y, GlmmFamily::bernoulli_logit));
    EXPECT_NEAR(model.log_joint(Vector::Zero(3)), -std::log(2.0), 1e-15);
  }
}

TEST(Glmm, PriorOnlyGradient) {
  GlmmData d = single_subject(0.0, GlmmFamily::poisson_log);
  d.subjects.push_back(d.subjects.front());
  for (auto& s : d.subjects) {
    s.y.resize(0);
    s.X.resize(0, 1);
  }
  const Glmm model(d);
  // b~_i = beta so the quadratic term vanishes.
  const Vector theta = (Vector(4) << 0.4, -0.3, 0.4, 0.4).finished();
  const Vector g = model.gradient(theta);
  EXPECT_NEAR(g[0], -0.4 / 100.0, 1e-15);
  EXPECT_NEAR(g[1], 2.0 + 0.3 / 100.0, 1e-15);
}

TEST(Glmm, BuildCi) {
  std::mt19937_64 rng(1);
  GlmmData d = toy_glmm_data(3, 2, 2, GlmmFamily::poisson_log, rng);
  for (auto& s : d.subjects) s.X.col(2).setConstant(0.7);
  const Glmm model(d);
  const Matrix C = model.build_Ci(0);
  const Matrix expected = (Matrix(2, 3) << 1, 0, 0.7, 0, 1, 0).finished();
  EXPECT_EQ(C, expected);

  GlmmData one = d;
  one.random_cols = {0};
  EXPECT_EQ(Glmm(one).build_Ci(1), (Matrix(1, 2) << 1, 0.7).finished());
  one.subject_specific_cols.clear();
  EXPECT_EQ(Glmm(one).build_Ci(2), Matrix::Identity(1, 1));
  EXPECT_THROW(Glmm(one).build_Ci(3), InvalidArgument);
}

TEST(Glmm, RejectsInvalidData) {
  std::mt19937_64 rng(2);
  GlmmData d = toy_glmm_data(3, 3, 1, GlmmFamily::poisson_log, rng);
  GlmmData varying = d;
  varying.subjects[1].X(2, 2) = 5.0;
  EXPECT_THROW(Glmm{varying}, InvalidData);
  GlmmData no_ones = d;
  no_ones.subjects[0].X(0, 0) = 2.0;
  EXPECT_THROW(Glmm{no_ones}, InvalidData);
  GlmmData bad_random = d;
  bad_random.random_cols = {1};
  EXPECT_THROW(Glmm{bad_random}, InvalidData);
  GlmmData negative = d;
  negative.subjects[0].y[0] = -1.0;
  EXPECT_THROW(Glmm{negative}, InvalidData);
  GlmmData bern = d;
  bern.family = GlmmFamily::bernoulli_logit;
  bern.subjects[0].y[0] = 2.0;
  EXPECT_THROW(Glmm{bern}, InvalidData);
  EXPECT_THROW(Glmm(d).log_joint(Vector::Constant(Glmm(d).dims().total_dim(), NAN)), NonFiniteParameter);
}

TEST(Glmm, MatchesNaiveImplementation) {
  std::mt19937_64 rng(3);
  for (auto family : {GlmmFamily::poisson_log, GlmmFamily::bernoulli_logit}) {
    for (Index L : {1, 2}) {
      const GlmmData d = toy_glmm_data(4, 3, L, family, rng);
      const Glmm model(d);
      for (int rep = 0; rep < 10; ++rep) {
        const Vector theta = randn(model.dims().total_dim(), rng, 0.5);
        const double expected = verify::naive_glmm_log_joint(d, theta);
        EXPECT_NEAR(model.log_joint(theta), expected, 1e-10 * (1.0 + std::abs(expected)));
      }
    }
  }
}

TEST(Glmm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  int failures = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto family = rep % 2 ? GlmmFamily::bernoulli_logit : GlmmFamily::poisson_log;
    const Glmm model(toy_glmm_data(3, 3, 1 + rep % 2, family, rng));
    const Vector theta = randn(model.dims().total_dim(), rng, 0.5);
    const Vector fd = verify::fd_gradient([&](const Vector& t) { return model.log_joint(t); }, theta, kFD);
    const auto agree = verify::compare(model.gradient(theta), fd, kFD.rtol, kFD.atol);
    if (!agree.pass) {
      ++failures;
      ADD_FAILURE() << "point " << rep << " coordinate " << agree.worst << " rel " << agree.max_rel_error;
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(Glmm, InvariantToSubjectOrder) {
  std::mt19937_64 rng(5);
  const GlmmData d = toy_glmm_data(4, 3, 2, GlmmFamily::poisson_log, rng);
  const Glmm model(d);
  const Vector theta = randn(model.dims().total_dim(), rng, 0.5);
  const std::vector<Index> perm{2, 0, 3, 1};
  GlmmData shuffled = d;
  Vector theta_perm = theta;
  const Index G = model.dims().G;
  for (Index i = 0; i < 4; ++i) {
    shuffled.subjects[i] = d.subjects[perm[i]];
    theta_perm.segment(G + 2 * i, 2) = theta.segment(G + 2 * perm[i], 2);
  }
  EXPECT_NEAR(Glmm(shuffled).log_joint(theta_perm), model.log_joint(theta), 1e-10);
}

TEST(Glmm, HessianCrossBlocksBetweenSubjectsVanish) {
  std::mt19937_64 rng(6);
  const Glmm model(toy_glmm_data(3, 4, 2, GlmmFamily::poisson_log, rng));
  const Vector theta = randn(model.dims().total_dim(), rng, 0.5);
  const Index G = model.dims().G;
  auto grad = [&](const Vector& t) { return model.gradient(t); };
  for (Index a = 0; a < 6; ++a) {
    for (Index b = 0; b < 6; ++b) {
      const double h = fd_hessian_entry(grad, theta, G + a, G + b);
      if (a / 2 != b / 2) {
        EXPECT_EQ(h, 0.0) << a << "," << b;
      } else if (a == b) {
        EXPECT_LT(h, 0.0);
      }
    }
  }
}

TEST(Glmm, Labels) {
  std::mt19937_64 rng(7);
  const Glmm model(toy_glmm_data(2, 2, 2, GlmmFamily::poisson_log, rng));
  const std::vector<std::string> global{"(Intercept)", "t", "trt", "x", "omega_1", "omega_2", "omega_3"};
  EXPECT_EQ(model.global_labels(), global);
  EXPECT_EQ(model.local_labels().size(), 4u);
  EXPECT_EQ(model.local_labels()[3], "b_2_2");
}

TEST(SvmNatural, Transforms) {
  EXPECT_NEAR(svm_natural(std::log(std::exp(1.0) - 1.0), 0.0, 0.0).sigma, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(svm_natural(0.0, 0.0, 0.0).phi, 0.5);
  EXPECT_DOUBLE_EQ(svm_natural(0.0, -2.5, 0.0).kappa, -2.5);
  EXPECT_TRUE(std::isfinite(svm_natural(700.0, 0.0, 700.0).sigma));
  EXPECT_DOUBLE_EQ(svm_natural(0.0, 0.0, 700.0).phi, 1.0);
  EXPECT_GT(svm_natural(-700.0, 0.0, -700.0).sigma, -1.0);
}

TEST(SvmNatural, RoundTrip) {
  for (double sigma = 0.011; sigma < 10.0; sigma *= 1.7) {
    for (double phi = 0.011; phi < 0.99; phi += 0.07) {
      const Vector t = svm_transformed(sigma, -0.4, phi);
      const auto back = svm_natural(t[0], t[1], t[2]);
      EXPECT_NEAR(back.sigma, sigma, 1e-12 * std::max(1.0, sigma));
      EXPECT_NEAR(back.phi, phi, 1e-12);
      EXPECT_EQ(back.kappa, -0.4);
    }
  }
}

TEST(SvmNatural, Monotone) {
  double last_sigma = 0.0, last_phi = 0.0;
  for (double x = -30.0; x <= 30.0; x += 0.5) {
    const auto nat = svm_natural(x, 0.0, x);
    EXPECT_GT(nat.sigma, last_sigma);
    EXPECT_GT(nat.phi, last_phi);
    last_sigma = nat.sigma;
    last_phi = nat.phi;
  }
}

TEST(Svm, SingleObservationAtZero) {
  SvmData d;
  d.y = Vector::Zero(1);
  const Svm model(d);
  EXPECT_EQ(model.dims(), (ModelDims{3, 1, 1, 0}));
  EXPECT_NEAR(model.log_joint(Vector::Zero(4)), 0.5 * std::log(0.75), 1e-15);
}

TEST(Svm, KappaGradientAtZero) {
  SvmData d;
  d.y = Vector::Zero(4);
  const Svm model(d);
  EXPECT_DOUBLE_EQ(model.gradient(Vector::Zero(7))[1], -2.0);
}

TEST(Svm, SmallPhiLimit) {
  std::mt19937_64 rng(8);
  const SvmData d = toy_svm_data(4, rng);
  const Svm model(d);
  Vector theta = randn(7, rng);
  theta[2] = -40.0;
  theta[0] = 0.0;
  theta[1] = 0.0;
  const auto b = theta.tail(4);
  const double sigma = std::log(2.0);
  double expected = -0.5 * b.squaredNorm() - 40.0 * 40.0 / 20.0;
  for (Index i = 0; i < 4; ++i) expected += -0.5 * sigma * b[i] - 0.5 * d.y[i] * d.y[i] * std::exp(-sigma * b[i]);
  EXPECT_NEAR(model.log_joint(theta), expected, 1e-12);
}

TEST(Svm, MatchesNaiveImplementation) {
  std::mt19937_64 rng(9);
  for (Index n : {1, 2, 5, 12}) {
    const SvmData d = toy_svm_data(n, rng);
    const Svm model(d);
    for (int rep = 0; rep < 10; ++rep) {
      const Vector theta = randn(3 + n, rng, 0.7);
      const double expected = verify::naive_svm_log_joint(d, theta);
      EXPECT_NEAR(model.log_joint(theta), expected, 1e-10 * (1.0 + std::abs(expected)));
    }
  }
}

TEST(Svm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> phi_dist(0.05, 0.95);
  int failures = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 1 + rep % 6;
    const Svm model(toy_svm_data(n, rng));
    Vector theta = randn(3 + n, rng, 0.7);
    const double phi = phi_dist(rng);
    theta[2] = std::log(phi / (1.0 - phi));
    const Vector fd = verify::fd_gradient([&](const Vector& t) { return model.log_joint(t); }, theta, kFD);
    const auto agree = verify::compare(model.gradient(theta), fd, kFD.rtol, kFD.atol);
    if (!agree.pass) {
      ++failures;
      ADD_FAILURE() << "point " << rep << " coordinate " << agree.worst << " rel " << agree.max_rel_error;
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(Svm, FirstStateGradientUsesStationaryPrecision) {
  // d/db_1 of -(1/2) b_1^2 (1 - phi^2) is -b_1 (1 - phi^2), not -b_1 (1 - phi)^2.
  SvmData d;
  d.y = Vector::Zero(1);
  const Svm model(d);
  Vector theta = Vector::Zero(4);
  theta[2] = 1.0;
  theta[3] = 2.0;
  const double phi = 1.0 / (1.0 + std::exp(-1.0));
  const double sigma = std::log(2.0);
  EXPECT_NEAR(model.gradient(theta)[3], -0.5 * sigma - 2.0 * (1.0 - phi * phi), 1e-14);
}

TEST(Svm, HessianBandOfLatentStates) {
  std::mt19937_64 rng(11);
  const Svm model(toy_svm_data(5, rng));
  const Vector theta = randn(8, rng, 0.5);
  auto grad = [&](const Vector& t) { return model.gradient(t); };
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      const double h = fd_hessian_entry(grad, theta, 3 + i, 3 + j);
      if (std::abs(i - j) > 1) {
        EXPECT_EQ(h, 0.0) << i << "," << j;
      } else if (i != j) {
        EXPECT_NE(h, 0.0);
      }
    }
  }
}

TEST(Svm, RejectsNonFinite) {
  SvmData d;
  d.y = Vector::Ones(3);
  const Svm model(d);
  Vector theta = Vector::Zero(6);
  theta[4] = INFINITY;
  EXPECT_THROW(model.log_joint(theta), NonFiniteParameter);
  EXPECT_THROW(model.gradient(theta), NonFiniteParameter);
  EXPECT_THROW(model.log_joint(Vector::Zero(5)), InvalidArgument);
  SvmData empty;
  EXPECT_THROW(Svm{empty}, InvalidData);
}

TEST(MeanCorrect, HandExample) {
  const Vector y = mean_correct((Vector(3) << 1.0, std::exp(1.0), std::exp(1.0)).finished());
  ASSERT_EQ(y.size(), 2);
  EXPECT_NEAR(y[0], 50.0, 1e-12);
  EXPECT_NEAR(y[1], -50.0, 1e-12);
}

TEST(MeanCorrect, ConstantAndCentering) {
  EXPECT_TRUE(mean_correct(Vector::Constant(6, 1.37)).isZero(0.0));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(0.5, 2.0);
  Vector r(50);
  for (auto& x : r) x = U(rng);
  EXPECT_NEAR(mean_correct(r).sum(), 0.0, 1e-10);
}

TEST(MeanCorrect, RejectsNonpositiveRate) {
  EXPECT_THROW(mean_correct((Vector(3) << 1.0, 0.0, 2.0).finished()), InvalidData);
  EXPECT_THROW(mean_correct((Vector(2) << -1.0, 2.0).finished()), InvalidData);
}
