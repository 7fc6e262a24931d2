#pragma once

#include "csgva/family.hpp"
#include "csgva/models.hpp"
#include "csgva/verify.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace csgva::testing {

/// log p(y, theta) = const - (theta - m)' Omega (theta - m) / 2 on the family's
/// (thetaG, thetaL) layout. The log evidence is known in closed form.
class GaussianTarget {
 public:
  GaussianTarget(ModelDims dims, Vector mean, Matrix precision, double log_const = 0.0)
      : dims_(dims), mean_(std::move(mean)), precision_(std::move(precision)), c_(log_const) {}

  ModelDims dims() const { return dims_; }
  double log_joint(const Vector& theta) const {
    const Vector r = theta - mean_;
    return c_ - 0.5 * r.dot(precision_ * r);
  }
  Vector gradient(const Vector& theta) const { return -precision_ * (theta - mean_); }

  double log_evidence() const {
    const double dim = static_cast<double>(mean_.size());
    return c_ + 0.5 * dim * std::log(2.0 * std::numbers::pi) -
           0.5 * std::log(precision_.determinant());
  }
  const Vector& mean() const { return mean_; }
  const Matrix& precision() const { return precision_; }

 private:
  ModelDims dims_;
  Vector mean_;
  Matrix precision_;
  double c_;
};

inline Vector randn(Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = N(rng);
  return v;
}

inline Matrix randn(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = N(rng);
  return m;
}

/// Random lambda of moderate scale; F = 0 when gaussian.
inline VariationalParams random_lambda(const ModelDims& dims, std::mt19937_64& rng,
                                       double scale = 0.3, bool gaussian = false) {
  VariationalParams p = VariationalParams::zeros(dims, gaussian);
  p.mu1 = randn(dims.G, rng, scale);
  p.c1star = randn(p.c1star.size(), rng, scale);
  p.d = randn(dims.local_dim(), rng, scale);
  p.D = randn(dims.local_dim(), dims.G, rng, scale);
  p.f = randn(p.f.size(), rng, scale);
  if (!gaussian) p.F = randn(p.F.rows(), p.F.cols(), rng, scale);
  return p;
}

/// Gaussian target equal (up to log_const) to q_lambda for an F = 0 lambda:
/// precision [C1 C1' + D'D, D'C2'; C2 D, C2 C2'] in (thetaG, thetaL) order.
inline GaussianTarget matched_target(const VariationalParams& lambda, double log_const = 0.0) {
  const Index G = lambda.global_dim();
  const Index nL = lambda.local_dim();
  const Matrix C1 = lambda.global_factor().to_dense();
  const Matrix C2 = star_to_factor(LowerFactor(lambda.local_pattern, lambda.f)).to_dense();
  Matrix prec(G + nL, G + nL);
  prec.topLeftCorner(G, G) = C1 * C1.transpose() + lambda.D.transpose() * lambda.D;
  prec.bottomLeftCorner(nL, G) = C2 * lambda.D;
  prec.topRightCorner(G, nL) = (C2 * lambda.D).transpose();
  prec.bottomRightCorner(nL, nL) = C2 * C2.transpose();
  Vector mean(G + nL);
  mean << lambda.mu1, lambda.d;
  return GaussianTarget(lambda.dims(), mean, prec, log_const);
}

inline verify::DenseLambda dense_of(const VariationalParams& p) {
  return {p.mu1, p.c1star, p.d, p.D, p.f, p.F,
          p.local_pattern->blocks(), p.local_pattern->block_size(), p.local_pattern->bandwidth()};
}

/// Longitudinal toy: columns (1, t, trt, x), trt constant within subject,
/// random effects on the first L of (1, t).
inline GlmmData toy_glmm_data(Index n, Index ni, Index L, GlmmFamily family, std::mt19937_64& rng) {
  GlmmData data;
  data.family = family;
  data.fixed_names = {"(Intercept)", "t", "trt", "x"};
  data.random_cols = L == 1 ? std::vector<Index>{0} : std::vector<Index>{0, 1};
  data.subject_specific_cols = {2};
  std::normal_distribution<double> N(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < n; ++i) {
    GlmmSubject s;
    s.X.resize(ni, 4);
    s.y.resize(ni);
    const double trt = coin(rng) ? 1.0 : 0.0;
    for (Index j = 0; j < ni; ++j) {
      s.X(j, 0) = 1.0;
      s.X(j, 1) = static_cast<double>(j) / static_cast<double>(ni);
      s.X(j, 2) = trt;
      s.X(j, 3) = 0.5 * N(rng);
      if (family == GlmmFamily::poisson_log) {
        s.y[j] = std::poisson_distribution<int>(2.0)(rng);
      } else {
        s.y[j] = coin(rng) ? 1.0 : 0.0;
      }
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

inline SvmData toy_svm_data(Index n, std::mt19937_64& rng) {
  SvmData data;
  data.y = randn(n, rng);
  return data;
}

}  // namespace csgva::testing
