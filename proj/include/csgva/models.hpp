#pragma once

#include "csgva/linalg.hpp"
#include "csgva/types.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <vector>

namespace csgva {

/// A model of the form p(thetaG) p(b_1..b_ell | thetaG) prod_i p(y_i | b_i, thetaG)
/// prod_{i > ell} p(b_i | b_{i-1..i-ell}, thetaG), evaluated on
/// theta = (thetaG, b_1, ..., b_n). Additive constants are dropped.
template <typename M>
concept Model = requires(const M& m, const Vector& theta) {
  { m.dims() } -> std::convertible_to<ModelDims>;
  { m.log_joint(theta) } -> std::convertible_to<double>;
  { m.gradient(theta) } -> std::convertible_to<Vector>;
};

namespace detail {

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void require_finite(const Vector& theta, const char* who) {
  if (!theta.allFinite()) throw NonFiniteParameter(std::string(who) + ": theta has non-finite entries");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generalized linear mixed model, centered parametrization.
// ---------------------------------------------------------------------------

enum class GlmmFamily { poisson_log, bernoulli_logit };

struct GlmmSubject {
  Vector y;  // n_i
  Matrix X;  // n_i x p, first column ones
};

struct GlmmData {
  std::vector<GlmmSubject> subjects;
  /// Names of the p columns of X (first is the intercept).
  std::vector<std::string> fixed_names;
  /// Columns of X that are also random-effect covariates, in Z order.
  /// Must start with the intercept column 0.
  std::vector<Index> random_cols;
  /// Columns of X constant within each subject (not in random_cols).
  std::vector<Index> subject_specific_cols;
  GlmmFamily family = GlmmFamily::poisson_log;
  double sigma_beta2 = 100.0;
  double sigma_omega2 = 100.0;
};

/// theta = (beta [data column order], omega = vech(W*), b~_1, ..., b~_n),
/// with W W' = Lambda^{-1} and b~_i ~ N(C_i beta_RG1, Lambda).
class Glmm {
 public:
  explicit Glmm(GlmmData data) : data_(std::move(data)) {
    if (data_.subjects.empty()) throw InvalidData("glmm: no subjects");
    p_ = data_.subjects.front().X.cols();
    if (p_ < 1) throw InvalidData("glmm: design has no columns");
    if (data_.random_cols.empty() || data_.random_cols.front() != 0) {
      throw InvalidData("glmm: the first random-effect column must be the intercept");
    }
    L_ = static_cast<Index>(data_.random_cols.size());
    std::vector<bool> used(static_cast<std::size_t>(p_), false);
    auto claim = [&](Index c) {
      if (c < 0 || c >= p_) throw InvalidData("glmm: column index out of range");
      if (used[c]) throw InvalidData("glmm: column listed twice in the partition");
      used[c] = true;
    };
    for (Index c : data_.random_cols) claim(c);
    for (Index c : data_.subject_specific_cols) claim(c);
    for (Index c = 0; c < p_; ++c) {
      if (!used[c]) g2_cols_.push_back(c);
    }
    rg1_cols_ = data_.random_cols;
    rg1_cols_.insert(rg1_cols_.end(), data_.subject_specific_cols.begin(),
                     data_.subject_specific_cols.end());

    for (std::size_t i = 0; i < data_.subjects.size(); ++i) {
      const auto& s = data_.subjects[i];
      if (s.X.cols() != p_ || s.X.rows() != s.y.size()) {
        throw InvalidData("glmm: subject " + std::to_string(i) + " has inconsistent design shape");
      }
      if (s.X.rows() > 0 && (s.X.col(0).array() != 1.0).any()) {
        throw InvalidData("glmm: first design column must be all ones");
      }
      for (Index c : data_.subject_specific_cols) {
        if (s.X.rows() > 0 && (s.X.col(c).array() != s.X(0, c)).any()) {
          throw InvalidData("glmm: column '" + column_name(c) +
                            "' is declared subject-specific but varies within subject " +
                            std::to_string(i));
        }
      }
      if (data_.family == GlmmFamily::bernoulli_logit &&
          ((s.y.array() != 0.0) && (s.y.array() != 1.0)).any()) {
        throw InvalidData("glmm: bernoulli responses must be 0 or 1");
      }
      if (data_.family == GlmmFamily::poisson_log && (s.y.array() < 0.0).any()) {
        throw InvalidData("glmm: poisson responses must be non-negative");
      }
    }
    omega_pattern_ = full_pattern(L_);
    Z_.reserve(data_.subjects.size());
    XG2_.reserve(data_.subjects.size());
    C_.reserve(data_.subjects.size());
    for (std::size_t i = 0; i < data_.subjects.size(); ++i) {
      const Matrix& X = data_.subjects[i].X;
      Matrix Z(X.rows(), L_);
      for (Index k = 0; k < L_; ++k) Z.col(k) = X.col(data_.random_cols[k]);
      Matrix XG2(X.rows(), static_cast<Index>(g2_cols_.size()));
      for (std::size_t k = 0; k < g2_cols_.size(); ++k) XG2.col(k) = X.col(g2_cols_[k]);
      Z_.push_back(std::move(Z));
      XG2_.push_back(std::move(XG2));
      C_.push_back(build_Ci(static_cast<Index>(i)));
    }
  }

  ModelDims dims() const { return {p_ + L_ * (L_ + 1) / 2, n(), L_, 0}; }
  Index n() const { return static_cast<Index>(data_.subjects.size()); }
  Index num_fixed() const { return p_; }
  Index num_omega() const { return L_ * (L_ + 1) / 2; }
  const GlmmData& data() const { return data_; }

  /// C_i = [I_L, (x_i^{G1}' ; 0_{(L-1) x g1})].
  Matrix build_Ci(Index i) const {
    if (i < 0 || i >= n()) throw InvalidArgument("build_Ci: subject index out of range");
    const Index g1 = static_cast<Index>(data_.subject_specific_cols.size());
    Matrix C = Matrix::Zero(L_, L_ + g1);
    C.leftCols(L_).setIdentity();
    const Matrix& X = data_.subjects[i].X;
    if (X.rows() > 0) {
      for (Index k = 0; k < g1; ++k) C(0, L_ + k) = X(0, data_.subject_specific_cols[k]);
    }
    return C;
  }

  double log_joint(const Vector& theta) const {
    detail::require_finite(theta, "glmm_log_joint");
    check_size(theta);
    const Vector beta = theta.head(p_);
    const Vector omega = theta.segment(p_, num_omega());
    const Vector beta_rg1 = gather(beta, rg1_cols_);
    const Vector beta_g2 = gather(beta, g2_cols_);
    const LowerFactor W = star_to_factor(LowerFactor(omega_pattern_, omega));

    double total = 0.0;
    for (Index i = 0; i < n(); ++i) {
      const Vector bt = theta.segment(p_ + num_omega() + i * L_, L_);
      Vector eta = Z_[i] * bt;
      if (XG2_[i].cols() > 0) eta.noalias() += XG2_[i] * beta_g2;
      const Vector& y = data_.subjects[i].y;
      double lik = y.dot(eta);
      for (Index j = 0; j < eta.size(); ++j) lik -= log_partition(eta[j]);
      const Vector r = bt - C_[i] * beta_rg1;
      total += lik - 0.5 * W.multiply_transpose(r).squaredNorm();
    }
    double log_det_w = 0.0;
    for (Index j = 0; j < L_; ++j) log_det_w += omega[omega_pattern_->diagonal_offset(j)];
    total += -beta.squaredNorm() / (2.0 * data_.sigma_beta2) -
             omega.squaredNorm() / (2.0 * data_.sigma_omega2) +
             static_cast<double>(n()) * log_det_w;
    return total;
  }

  Vector gradient(const Vector& theta) const {
    detail::require_finite(theta, "glmm_grad");
    check_size(theta);
    const Vector beta = theta.head(p_);
    const Vector omega = theta.segment(p_, num_omega());
    const Vector beta_rg1 = gather(beta, rg1_cols_);
    const Vector beta_g2 = gather(beta, g2_cols_);
    const LowerFactor W = star_to_factor(LowerFactor(omega_pattern_, omega));

    Vector out(theta.size());
    Vector g_rg1 = -beta_rg1 / data_.sigma_beta2;
    Vector g_g2 = -beta_g2 / data_.sigma_beta2;
    Vector outer_sum = Vector::Zero(num_omega());
    const Index local0 = p_ + num_omega();
    for (Index i = 0; i < n(); ++i) {
      const Vector bt = theta.segment(local0 + i * L_, L_);
      Vector eta = Z_[i] * bt;
      if (XG2_[i].cols() > 0) eta.noalias() += XG2_[i] * beta_g2;
      Vector resid = data_.subjects[i].y;
      for (Index j = 0; j < eta.size(); ++j) resid[j] -= mean_function(eta[j]);
      const Vector r = bt - C_[i] * beta_rg1;
      const Vector wr = W.multiply_transpose(r);  // W' r
      const Vector prec_r = W.multiply(wr);       // W W' r
      if (XG2_[i].cols() > 0) g_g2.noalias() += XG2_[i].transpose() * resid;
      g_rg1.noalias() += C_[i].transpose() * prec_r;
      accumulate_pattern_outer(r, wr, *omega_pattern_, outer_sum);  // vech(r r' W)
      out.segment(local0 + i * L_, L_) = Z_[i].transpose() * resid - prec_r;
    }
    out.segment(p_, num_omega()) = -dstar_scale(W, outer_sum) +
                                   static_cast<double>(n()) * pattern_identity(*omega_pattern_) -
                                   omega / data_.sigma_omega2;
    for (std::size_t k = 0; k < rg1_cols_.size(); ++k) out[rg1_cols_[k]] = g_rg1[k];
    for (std::size_t k = 0; k < g2_cols_.size(); ++k) out[g2_cols_[k]] = g_g2[k];
    return out;
  }

  std::vector<std::string> global_labels() const {
    std::vector<std::string> out(data_.fixed_names.begin(), data_.fixed_names.end());
    out.resize(static_cast<std::size_t>(p_));
    for (Index c = 0; c < p_; ++c) {
      if (out[c].empty()) out[c] = "beta_" + std::to_string(c);
    }
    for (Index k = 1; k <= num_omega(); ++k) out.push_back("omega_" + std::to_string(k));
    return out;
  }

  std::vector<std::string> local_labels() const {
    std::vector<std::string> out;
    for (Index i = 1; i <= n(); ++i) {
      for (Index k = 1; k <= L_; ++k) {
        out.push_back("b_" + std::to_string(i) + "_" + std::to_string(k));
      }
    }
    return out;
  }

  double log_partition(double eta) const {
    return data_.family == GlmmFamily::poisson_log ? std::exp(eta) : detail::softplus(eta);
  }
  double mean_function(double eta) const {
    return data_.family == GlmmFamily::poisson_log ? std::exp(eta) : detail::logistic(eta);
  }

 private:
  std::string column_name(Index c) const {
    return c < static_cast<Index>(data_.fixed_names.size()) ? data_.fixed_names[c]
                                                            : std::to_string(c);
  }

  void check_size(const Vector& theta) const {
    if (theta.size() != dims().total_dim()) throw InvalidArgument("glmm: theta has wrong length");
  }

  static Vector gather(const Vector& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
    return out;
  }

  GlmmData data_;
  Index p_ = 0;
  Index L_ = 0;
  std::vector<Index> rg1_cols_;
  std::vector<Index> g2_cols_;
  PatternPtr omega_pattern_;
  std::vector<Matrix> Z_;
  std::vector<Matrix> XG2_;
  std::vector<Matrix> C_;
};

// ---------------------------------------------------------------------------
// Stochastic volatility model, noncentered.
// ---------------------------------------------------------------------------

struct SvmNatural {
  double sigma;
  double kappa;
  double phi;
};

/// (alpha, kappa, psi) -> (sigma, kappa, phi), sigma = softplus(alpha), phi = logistic(psi).
inline SvmNatural svm_natural(double alpha, double kappa, double psi) {
  return {detail::softplus(alpha), kappa, detail::logistic(psi)};
}

/// Inverse of svm_natural: alpha = log(exp(sigma) - 1), psi = logit(phi).
inline Vector svm_transformed(double sigma, double kappa, double phi) {
  if (!(sigma > 0.0) || !(phi > 0.0 && phi < 1.0)) {
    throw InvalidArgument("svm_transformed: need sigma > 0 and 0 < phi < 1");
  }
  const double alpha = sigma > 35.0 ? sigma + std::log1p(-std::exp(-sigma)) : std::log(std::expm1(sigma));
  Vector out(3);
  out << alpha, kappa, std::log(phi) - std::log1p(-phi);
  return out;
}

struct SvmData {
  Vector y;  // mean-corrected returns
  double sigma_alpha2 = 10.0;
  double sigma_kappa2 = 10.0;
  double sigma_psi2 = 10.0;
};

/// theta = (alpha, kappa, psi, b_1, ..., b_n).
class Svm {
 public:
  explicit Svm(SvmData data) : data_(std::move(data)) {
    if (data_.y.size() < 1) throw InvalidData("svm: need at least one observation");
    if (!data_.y.allFinite()) throw InvalidData("svm: non-finite response");
    y2_ = data_.y.array().square();
  }

  ModelDims dims() const {
    const Index n = data_.y.size();
    return {3, n, 1, n > 1 ? 1 : 0};
  }
  const SvmData& data() const { return data_; }

  double log_joint(const Vector& theta) const {
    detail::require_finite(theta, "svm_log_joint");
    check_size(theta);
    const Index n = data_.y.size();
    const double alpha = theta[0];
    const double kappa = theta[1];
    const double psi = theta[2];
    const auto nat = svm_natural(alpha, kappa, psi);
    const auto b = theta.tail(n);
    // log(1 - phi^2) = log(1 - phi) + log(1 + phi), log(1 - phi) = -softplus(psi)
    const double log_one_minus_phi2 = -detail::softplus(psi) + std::log1p(nat.phi);
    const double one_minus_phi2 = std::exp(log_one_minus_phi2);
    double total = -0.5 * static_cast<double>(n) * kappa;
    for (Index i = 0; i < n; ++i) {
      total -= 0.5 * nat.sigma * b[i];
      total -= 0.5 * y2_[i] * std::exp(-nat.sigma * b[i] - kappa);
    }
    for (Index i = 1; i < n; ++i) {
      const double e = b[i] - nat.phi * b[i - 1];
      total -= 0.5 * e * e;
    }
    total -= 0.5 * b[0] * b[0] * one_minus_phi2;
    total += 0.5 * log_one_minus_phi2;
    total -= alpha * alpha / (2.0 * data_.sigma_alpha2) + kappa * kappa / (2.0 * data_.sigma_kappa2) +
             psi * psi / (2.0 * data_.sigma_psi2);
    return total;
  }

  Vector gradient(const Vector& theta) const {
    detail::require_finite(theta, "svm_grad");
    check_size(theta);
    const Index n = data_.y.size();
    const double alpha = theta[0];
    const double kappa = theta[1];
    const double psi = theta[2];
    const auto nat = svm_natural(alpha, kappa, psi);
    const double sigma = nat.sigma;
    const double phi = nat.phi;
    const auto b = theta.tail(n);
    const double dsigma = detail::logistic(alpha);  // 1 - exp(-sigma)
    // phi (1 - phi), below 1e-15 once |psi| > 35
    const double dphi = std::abs(psi) > 35.0 ? 0.0 : phi * detail::logistic(-psi);

    Vector out(theta.size());
    double g_alpha = 0.0;
    double g_kappa = 0.0;
    Vector scaled(n);  // y_i^2 exp(-sigma b_i - kappa)
    for (Index i = 0; i < n; ++i) {
      scaled[i] = y2_[i] * std::exp(-sigma * b[i] - kappa);
      g_alpha += b[i] * scaled[i] - b[i];
      g_kappa += scaled[i];
    }
    out[0] = 0.5 * g_alpha * dsigma - alpha / data_.sigma_alpha2;
    out[1] = 0.5 * (g_kappa - static_cast<double>(n)) - kappa / data_.sigma_kappa2;

    double ar = b[0] * b[0] * phi;
    for (Index i = 1; i < n; ++i) ar += (b[i] - phi * b[i - 1]) * b[i - 1];
    // phi/(1 - phi^2) * phi(1 - phi) = phi^2 / (1 + phi)
    out[2] = ar * dphi - phi * phi / (1.0 + phi) - psi / data_.sigma_psi2;

    for (Index i = 0; i < n; ++i) {
      double g = 0.5 * sigma * (scaled[i] - 1.0);
      if (i + 1 < n) g += phi * (b[i + 1] - phi * b[i]);
      if (i == 0) {
        g -= b[0] * (1.0 - phi * phi);
      } else {
        g -= b[i] - phi * b[i - 1];
      }
      out[3 + i] = g;
    }
    return out;
  }

  std::vector<std::string> global_labels() const { return {"alpha", "kappa", "psi"}; }

  std::vector<std::string> local_labels() const {
    std::vector<std::string> out;
    for (Index i = 1; i <= data_.y.size(); ++i) out.push_back("b_" + std::to_string(i));
    return out;
  }

 private:
  void check_size(const Vector& theta) const {
    if (theta.size() != 3 + data_.y.size()) throw InvalidArgument("svm: theta has wrong length");
  }

  SvmData data_;
  Vector y2_;
};

/// y_t = 100 { log(r_t / r_{t-1}) - mean log-return }, t = 1..n.
inline Vector mean_correct(const Vector& rates) {
  if (rates.size() < 2) throw InvalidData("mean_correct: need at least two rates");
  for (Index t = 0; t < rates.size(); ++t) {
    if (!(rates[t] > 0.0) || !std::isfinite(rates[t])) {
      throw InvalidData("mean_correct: rate at position " + std::to_string(t + 1) +
                        " is not a positive number", static_cast<std::size_t>(t + 1));
    }
  }
  const Index n = rates.size() - 1;
  Vector lr(n);
  for (Index t = 0; t < n; ++t) lr[t] = std::log(rates[t + 1] / rates[t]);
  return 100.0 * (lr.array() - lr.mean()).matrix();
}

}  // namespace csgva
