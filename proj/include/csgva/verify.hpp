#pragma once

// Independent oracles for tests: finite differences, dense re-implementations
// and Monte Carlo mean tests. Only dense Eigen arithmetic is used here; none of
// the banded kernels or family routines are called, so agreement with them is
// evidence rather than tautology.

#include "csgva/models.hpp"
#include "csgva/types.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>

namespace csgva::verify {

class OracleFailure : public std::runtime_error {
 public:
  OracleFailure(const std::string& what, Index coordinate)
      : std::runtime_error(what), coordinate_(coordinate) {}
  Index coordinate() const { return coordinate_; }

 private:
  Index coordinate_;
};

struct FDSpec {
  double h = 1e-5;
  double rtol = 1e-6;
  double atol = 1e-8;
};

using ScalarFn = std::function<double(const Vector&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
inline Vector fd_gradient(const ScalarFn& f, const Vector& x, const FDSpec& spec = {}) {
  if (!(spec.h > 0.0)) throw std::invalid_argument("fd_gradient: h must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + spec.h;
    const double up = f(probe);
    probe[i] = x[i] - spec.h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleFailure("fd_gradient: non-finite probe at coordinate " + std::to_string(i), i);
    }
    g[i] = (up - down) / (2.0 * spec.h);
  }
  return g;
}

struct Agreement {
  bool pass = true;
  double max_rel_error = 0.0;
  Index worst = -1;
};

/// Coordinatewise |a - b| <= max(rtol * max(|a|, |b|), atol).
inline Agreement compare(const Vector& analytic, const Vector& reference, double rtol, double atol) {
  Agreement out;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - reference[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(reference[i]));
    const double rel = diff / std::max(scale, atol / rtol);
    if (rel > out.max_rel_error || !std::isfinite(diff)) {
      out.max_rel_error = std::isfinite(diff) ? rel : INFINITY;
      out.worst = i;
    }
    if (!(diff <= std::max(rtol * scale, atol))) out.pass = false;
  }
  return out;
}

/// log N(x; mean, (T T')^{-1}) for lower-triangular T.
inline double dense_gaussian_logpdf(const Vector& mean, const Matrix& T, const Vector& x) {
  const Index dim = mean.size();
  double log_det = 0.0;
  for (Index i = 0; i < dim; ++i) {
    if (!(T(i, i) > 0.0)) throw std::domain_error("dense_gaussian_logpdf: singular T");
    log_det += std::log(T(i, i));
  }
  const Matrix Tl = T.triangularView<Eigen::Lower>();
  const Vector u = Tl.transpose() * (x - mean);
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi) + log_det -
         0.5 * u.squaredNorm();
}

/// Dense lower-triangular factor from a vech vector on a block band, read in
/// column-major diagonal-down order, with exponentiated diagonal.
inline Matrix dense_factor_from_star(const Vector& star, Index n, Index L, Index ell) {
  const Index dim = n * L;
  Matrix C = Matrix::Zero(dim, dim);
  Index k = 0;
  for (Index j = 0; j < dim; ++j) {
    for (Index i = j; i < dim; ++i) {
      if (i / L - j / L > ell) continue;
      C(i, j) = (i == j) ? std::exp(star[k]) : star[k];
      ++k;
    }
  }
  if (k != star.size()) throw std::invalid_argument("dense_factor_from_star: size mismatch");
  return C;
}

/// Blocks of lambda in plain dense form (all that the oracles need).
struct DenseLambda {
  Vector mu1;
  Vector c1star;
  Vector d;
  Matrix D;
  Vector f;
  Matrix F;
  Index n = 0;
  Index L = 0;
  Index ell = 0;
};

/// log q(thetaG) + log q(thetaL | thetaG) by dense linear algebra.
inline double naive_log_density(const DenseLambda& lam, const Vector& theta) {
  const Index G = lam.mu1.size();
  const Index nL = lam.d.size();
  const Vector tG = theta.head(G);
  const Vector tL = theta.tail(nL);
  const Matrix C1 = dense_factor_from_star(lam.c1star, G, 1, G - 1);
  const Vector c2star = lam.f + lam.F * tG;
  const Matrix C2 = dense_factor_from_star(c2star, lam.n, lam.L, lam.ell);
  const Vector shift = lam.D * (lam.mu1 - tG);
  const Vector mu2 = lam.d + C2.transpose().triangularView<Eigen::Upper>().solve(shift);
  return dense_gaussian_logpdf(lam.mu1, C1, tG) + dense_gaussian_logpdf(mu2, C2, tL);
}

struct MeanTest {
  bool pass = true;
  Vector z;
  double max_abs_z = 0.0;
};

/// Rows are iid samples; fails iff some coordinate has |z| > threshold with
/// z = (sample mean - claimed) / standard error.
inline MeanTest mc_mean_test(const Matrix& samples, const Vector& claimed, double threshold = 4.0) {
  const Index M = samples.rows();
  if (M < 1000) throw std::invalid_argument("mc_mean_test: need at least 1000 samples");
  MeanTest out;
  out.z.resize(samples.cols());
  for (Index j = 0; j < samples.cols(); ++j) {
    const double mean = samples.col(j).mean();
    const double var = (samples.col(j).array() - mean).square().sum() / static_cast<double>(M - 1);
    const double se = std::sqrt(var / static_cast<double>(M));
    const double z = se > 0.0 ? (mean - claimed[j]) / se : (mean == claimed[j] ? 0.0 : INFINITY);
    out.z[j] = z;
    out.max_abs_z = std::max(out.max_abs_z, std::abs(z));
    if (!(std::abs(z) <= threshold)) out.pass = false;
  }
  return out;
}

/// Composite Simpson rule on [lo, hi]^2 with `intervals` (even) per axis.
inline double simpson_2d(const std::function<double(double, double)>& f, double lo, double hi,
                         int intervals) {
  if (intervals % 2 != 0) ++intervals;
  const double h = (hi - lo) / intervals;
  auto weight = [&](int i) { return (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
  double acc = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    for (int j = 0; j <= intervals; ++j) {
      acc += weight(i) * weight(j) * f(lo + i * h, lo + j * h);
    }
  }
  return acc * h * h / 9.0;
}

/// GLMM log joint through the noncentered predictor eta = X beta + Z b with
/// b_i = b~_i - C_i beta_RG1, and a dense W.
inline double naive_glmm_log_joint(const GlmmData& data, const Vector& theta) {
  const Index p = data.subjects.front().X.cols();
  const Index L = static_cast<Index>(data.random_cols.size());
  const Index q = L * (L + 1) / 2;
  const Index n = static_cast<Index>(data.subjects.size());
  const Vector beta = theta.head(p);
  const Vector omega = theta.segment(p, q);
  const Matrix W = dense_factor_from_star(omega, L, 1, L - 1);
  const Matrix prec = W * W.transpose();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto& s = data.subjects[i];
    const Vector bt = theta.segment(p + q + i * L, L);
    // Subject-level mean of b~_i: beta_R plus, in the first row, x^{G1}' beta_G1.
    Vector centre(L);
    for (Index k = 0; k < L; ++k) centre[k] = beta[data.random_cols[k]];
    if (s.X.rows() > 0) {
      for (Index c : data.subject_specific_cols) centre[0] += s.X(0, c) * beta[c];
    }
    const Vector b = bt - centre;
    for (Index j = 0; j < s.X.rows(); ++j) {
      double eta = s.X.row(j).dot(beta);
      for (Index k = 0; k < L; ++k) eta += s.X(j, data.random_cols[k]) * b[k];
      const double h = data.family == GlmmFamily::poisson_log ? std::exp(eta)
                                                               : std::log(1.0 + std::exp(eta));
      total += s.y[j] * eta - h;
    }
    total -= 0.5 * b.dot(prec * b);
  }
  total += -beta.squaredNorm() / (2.0 * data.sigma_beta2) -
           omega.squaredNorm() / (2.0 * data.sigma_omega2) +
           static_cast<double>(n) * std::log(W.determinant());
  return total;
}

/// SVM log joint written term by term from its definition.
inline double naive_svm_log_joint(const SvmData& data, const Vector& theta) {
  const Index n = data.y.size();
  const double alpha = theta[0], kappa = theta[1], psi = theta[2];
  const double sigma = std::log(std::exp(alpha) + 1.0);
  const double phi = std::exp(psi) / (1.0 + std::exp(psi));
  double total = 0.0;
  // log N(y_i; 0, exp(sigma b_i + kappa)) without the 2 pi constant
  for (Index i = 0; i < n; ++i) {
    const double b = theta[3 + i];
    const double var = std::exp(sigma * b + kappa);
    total += -0.5 * std::log(var) - 0.5 * data.y[i] * data.y[i] / var;
  }
  // b_1 ~ N(0, 1/(1 - phi^2)), b_i ~ N(phi b_{i-1}, 1)
  const double v1 = 1.0 / (1.0 - phi * phi);
  total += -0.5 * std::log(v1) - 0.5 * theta[3] * theta[3] / v1;
  for (Index i = 1; i < n; ++i) {
    const double e = theta[3 + i] - phi * theta[2 + i];
    total += -0.5 * e * e;
  }
  total += -0.5 * alpha * alpha / data.sigma_alpha2 - 0.5 * kappa * kappa / data.sigma_kappa2 -
           0.5 * psi * psi / data.sigma_psi2;
  return total;
}

}  // namespace csgva::verify
