#pragma once

// Stochastic gradient ascent with Adam, window-averaged bound tracking and a
// regression-slope stopping rule.

#include "csgva/bounds.hpp"
#include "csgva/random.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csgva {

struct AdamHyper {
  double step = 0.001;
  double tau1 = 0.9;
  double tau2 = 0.99;
  double eps = 1e-8;
};

struct AdamState {
  AdamState() = default;
  explicit AdamState(Index size, AdamHyper h = {})
      : m(Vector::Zero(size)), v(Vector::Zero(size)), hyper(h) {}

  Vector m;
  Vector v;
  std::int64_t t = 0;
  AdamHyper hyper;
};

/// Updates the moment estimates in place and returns the ascent step.
inline Vector adam_step(AdamState& state, const Vector& g) {
  if (g.size() != state.m.size()) throw InvalidArgument("adam_step: gradient size mismatch");
  const auto& h = state.hyper;
  state.t += 1;
  state.m = h.tau1 * state.m + (1.0 - h.tau1) * g;
  state.v = h.tau2 * state.v + (1.0 - h.tau2) * g.cwiseProduct(g);
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(h.tau1, t);
  const double c2 = 1.0 - std::pow(h.tau2, t);
  Vector delta(g.size());
  for (Index i = 0; i < g.size(); ++i) {
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    delta[i] = h.step * m_hat / (std::sqrt(v_hat) + h.eps);
  }
  return delta;
}

/// OLS slope of values against abscissae 1..k.
inline double regression_slope(std::span<const double> values) {
  const double k = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  const double x_mean = (k + 1.0) / 2.0;
  double y_mean = 0.0;
  for (double y : values) y_mean += y;
  y_mean /= k;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = static_cast<double>(i + 1) - x_mean;
    sxy += dx * (values[i] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// True once the least-squares line through the last `kappa` window averages
/// has a strictly negative slope.
inline bool convergence_check(std::span<const double> window_averages, int kappa = 6) {
  if (kappa < 2) throw InvalidArgument("convergence_check: kappa must be at least 2");
  if (window_averages.size() < static_cast<std::size_t>(kappa)) return false;
  return regression_slope(window_averages.last(static_cast<std::size_t>(kappa))) < 0.0;
}

enum class Method { gva, csgva, iw };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::gva: return "gva";
    case Method::csgva: return "csgva";
    case Method::iw: return "iw";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "gva") return Method::gva;
  if (s == "csgva") return Method::csgva;
  if (s == "iw") return Method::iw;
  throw ConfigError("unknown method '" + s + "' (expected gva, csgva or iw)");
}

struct FitConfig {
  Method method = Method::csgva;
  int K = 1;
  std::int64_t max_iters = 100000;
  int stop_window = 1000;
  int kappa = 6;
  std::uint64_t seed = 1;
  int iw_iters = 1000;
  int max_rejections = 100;
  AdamHyper adam;
  unsigned threads = 1;
  /// Keep F at its initial value; with F = 0 this is GVA run through the
  /// conditional code path.
  bool freeze_F = false;

  void validate() const {
    if (method == Method::iw && K < 2) throw ConfigError("iw fits need K >= 2");
    if (method != Method::iw && K != 1) throw ConfigError("gva/csgva fits use K = 1");
    if (kappa < 2) throw ConfigError("kappa must be at least 2");
    if (stop_window < 1) throw ConfigError("stop_window must be positive");
    if (max_iters < 1) throw ConfigError("max_iters must be positive");
    if (iw_iters < 1) throw ConfigError("iw_iters must be positive");
  }
};

enum class StopReason { slope, max_iters, error };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::slope: return "slope";
    case StopReason::max_iters: return "max_iters";
    case StopReason::error: return "error";
  }
  return "?";
}

struct FitReport {
  VariationalParams lambda;
  std::vector<double> trace;            // per-iteration bound estimates
  std::vector<double> window_averages;  // one per completed window
  std::int64_t iterations = 0;
  std::int64_t rejected = 0;
  StopReason stop = StopReason::max_iters;
  double wall_seconds = 0.0;
};

class FitDiverged : public std::runtime_error {
 public:
  FitDiverged(const std::string& what, FitReport partial)
      : std::runtime_error(what), report_(std::move(partial)) {}
  const FitReport& report() const { return report_; }

 private:
  FitReport report_;
};

/// Runs the stochastic gradient ascent from lambda0. A draw whose evaluation
/// is non-finite or hits a singular factor is discarded without touching the
/// Adam state; `max_rejections` consecutive discards abort the fit.
template <Model M>
FitReport fit(const M& model, const VariationalParams& lambda0, const FitConfig& config) {
  config.validate();
  lambda0.validate();
  if (!(lambda0.dims() == model.dims())) {
    throw InvalidArgument("fit: initial lambda does not match the model dimensions");
  }
  const auto start = std::chrono::steady_clock::now();
  FitReport report;
  report.lambda = lambda0;
  VariationalParams& lambda = report.lambda;
  const bool freeze_F = config.freeze_F || lambda.gaussian_mode;
  const Index dim = lambda.global_dim() + lambda.local_dim();
  const int K = config.method == Method::iw ? config.K : 1;
  const std::int64_t budget = config.method == Method::iw
                                  ? std::min<std::int64_t>(config.iw_iters, config.max_iters)
                                  : config.max_iters;
  AdamState adam(lambda.flat_size(), config.adam);
  std::vector<Vector> draws(static_cast<std::size_t>(K));
  std::uint64_t attempt = 0;
  int consecutive_rejections = 0;
  double window_sum = 0.0;

  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  while (report.iterations < budget) {
    for (int k = 0; k < K; ++k) {
      draws[static_cast<std::size_t>(k)] =
          standard_normal(dim, config.seed, StreamDomain::training, attempt, static_cast<std::uint64_t>(k));
    }
    ++attempt;
    GradientEstimate est;
    bool ok = true;
    try {
      est = K == 1 ? path_gradient(lambda, model, draws.front())
                   : dreg_gradient(lambda, model, std::span<const Vector>(draws), config.threads);
      ok = std::isfinite(est.bound) && est.gradient.all_finite();
    } catch (const SingularFactor&) {
      ok = false;
    } catch (const NonFiniteParameter&) {
      ok = false;
    }
    if (!ok) {
      ++report.rejected;
      if (++consecutive_rejections >= config.max_rejections) {
        report.stop = StopReason::error;
        report.wall_seconds = elapsed();
        throw FitDiverged("fit diverged: " + std::to_string(consecutive_rejections) +
                              " consecutive non-finite evaluations at iteration " +
                              std::to_string(report.iterations),
                          report);
      }
      continue;
    }
    consecutive_rejections = 0;
    if (freeze_F) est.gradient.F.setZero();
    const Vector delta = adam_step(adam, est.gradient.flatten());
    lambda.assign_flat(lambda.flatten() + delta);
    ++report.iterations;
    report.trace.push_back(est.bound);
    window_sum += est.bound;
    if (report.iterations % config.stop_window == 0) {
      report.window_averages.push_back(window_sum / config.stop_window);
      window_sum = 0.0;
      if (config.method != Method::iw && convergence_check(report.window_averages, config.kappa)) {
        report.stop = StopReason::slope;
        report.wall_seconds = elapsed();
        return report;
      }
    }
  }
  report.stop = StopReason::max_iters;
  report.wall_seconds = elapsed();
  return report;
}

struct BoundEstimate {
  double mean = 0.0;
  double sd = 0.0;
  int K = 1;
  int reps = 0;
};

/// Mean and sd of `reps` independent bound estimates (ELBO for K = 1, IWLB
/// otherwise), drawn from a stream disjoint from training.
template <Model M>
BoundEstimate estimate_bound(const VariationalParams& lambda, const M& model, int K, int reps,
                             std::uint64_t seed, unsigned threads = 1) {
  if (K < 1 || reps < 1) throw InvalidArgument("estimate_bound: K and reps must be positive");
  const Index dim = lambda.global_dim() + lambda.local_dim();
  Vector values(reps);
  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
    std::vector<Vector> draws;
    draws.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      draws.push_back(standard_normal(dim, seed, StreamDomain::bound_estimate, r,
                                      static_cast<std::uint64_t>(k)));
    }
    values[static_cast<Index>(r)] = iwlb_from_log_weights(log_weights(lambda, model, std::span<const Vector>(draws)));
  });
  BoundEstimate out;
  out.K = K;
  out.reps = reps;
  out.mean = values.mean();
  out.sd = reps > 1 ? std::sqrt((values.array() - out.mean).square().sum() / (reps - 1)) : 0.0;
  return out;
}

}  // namespace csgva
