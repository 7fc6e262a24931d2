#pragma once

// Monte Carlo lower bounds and their lambda-gradients.

#include "csgva/family.hpp"
#include "csgva/models.hpp"
#include "csgva/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace csgva {

/// Everything one draw contributes: theta, log p, log q, and
/// grad_theta {log p - log q}.
struct SampleEvaluation {
  Draw draw;
  double log_p = 0.0;
  double log_q = 0.0;
  Vector grad_log_weight;

  double log_weight() const { return log_p - log_q; }
};

template <Model M>
SampleEvaluation evaluate_sample(const VariationalParams& lambda, const M& model, const Vector& s,
                                 bool with_gradient = true) {
  SampleEvaluation ev;
  ev.draw = reparam(lambda, s);
  const Vector theta = ev.draw.theta();
  ev.log_p = model.log_joint(theta);
  ev.log_q = log_density(lambda, ev.draw);
  if (with_gradient) {
    ev.grad_log_weight = model.gradient(theta) - grad_theta_log_density(lambda, ev.draw);
  }
  return ev;
}

/// log sum exp with the terms summed largest first, so the result is the same
/// for any permutation of the input.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double top = sorted.front();
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : sorted) acc += std::exp(v - top);
  return top + std::log(acc);
}

inline double log_sum_exp(const Vector& values) {
  return log_sum_exp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

struct WeightSet {
  Vector log_weights;
  Vector normalized;  // softmax(log_weights)
  std::vector<Draw> draws;
};

inline Vector normalized_weights(const Vector& log_weights) {
  const double lse = log_sum_exp(log_weights);
  return (log_weights.array() - lse).exp().matrix();
}

/// One-sample ELBO estimate log p(y, theta) - log q(theta).
template <Model M>
double elbo_estimate(const VariationalParams& lambda, const M& model, const Vector& s) {
  return evaluate_sample(lambda, model, s, false).log_weight();
}

/// log (1/K) sum_k w_k.
inline double iwlb_from_log_weights(const Vector& log_weights) {
  if (log_weights.size() < 1) throw InvalidArgument("iwlb: need at least one draw");
  return log_sum_exp(log_weights) - std::log(static_cast<double>(log_weights.size()));
}

/// (1/(1-alpha)) log (1/K) sum_k w_k^{1-alpha}; alpha = 1 is the mean log-weight.
inline double renyi_from_log_weights(const Vector& log_weights, double alpha) {
  if (log_weights.size() < 1) throw InvalidArgument("renyi_bound: need at least one draw");
  if (alpha == 1.0) return log_weights.mean();
  if (alpha == 0.0) return iwlb_from_log_weights(log_weights);
  const Vector scaled = (1.0 - alpha) * log_weights;
  return (log_sum_exp(scaled) - std::log(static_cast<double>(log_weights.size()))) / (1.0 - alpha);
}

template <Model M>
WeightSet weight_set(const VariationalParams& lambda, const M& model, std::span<const Vector> draws) {
  if (draws.empty()) throw InvalidArgument("weight_set: need at least one draw");
  WeightSet ws;
  ws.log_weights.resize(static_cast<Index>(draws.size()));
  ws.draws.reserve(draws.size());
  for (std::size_t k = 0; k < draws.size(); ++k) {
    auto ev = evaluate_sample(lambda, model, draws[k], false);
    ws.log_weights[static_cast<Index>(k)] = ev.log_weight();
    ws.draws.push_back(std::move(ev.draw));
  }
  ws.normalized = normalized_weights(ws.log_weights);
  return ws;
}

template <Model M>
Vector log_weights(const VariationalParams& lambda, const M& model, std::span<const Vector> draws,
                   unsigned threads = 1) {
  Vector out(static_cast<Index>(draws.size()));
  parallel_for(draws.size(), threads, [&](std::size_t k) {
    out[static_cast<Index>(k)] = evaluate_sample(lambda, model, draws[k], false).log_weight();
  });
  return out;
}

template <Model M>
double iwlb_estimate(const VariationalParams& lambda, const M& model, std::span<const Vector> draws) {
  return iwlb_from_log_weights(log_weights(lambda, model, draws));
}

template <Model M>
double renyi_bound(const VariationalParams& lambda, const M& model, std::span<const Vector> draws,
                   double alpha) {
  return renyi_from_log_weights(log_weights(lambda, model, draws), alpha);
}

enum class Estimator { path, total, dreg };

struct GradientEstimate {
  LambdaGradient gradient;
  Estimator estimator = Estimator::path;
  double bound = 0.0;
};

inline LambdaGradient jacobian_of(const VariationalParams& lambda, const SampleEvaluation& ev) {
  const Index G = lambda.global_dim();
  return apply_jacobian(lambda, ev.draw, ev.grad_log_weight.head(G),
                        ev.grad_log_weight.tail(lambda.local_dim()));
}

/// Path derivative: grad_lambda r(s) {grad log p - grad log q}.
template <Model M>
GradientEstimate path_gradient(const VariationalParams& lambda, const M& model, const Vector& s) {
  const auto ev = evaluate_sample(lambda, model, s);
  return {jacobian_of(lambda, ev), Estimator::path, ev.log_weight()};
}

/// Total derivative: path derivative minus the direct score of log q.
template <Model M>
GradientEstimate total_gradient(const VariationalParams& lambda, const M& model, const Vector& s) {
  const auto ev = evaluate_sample(lambda, model, s);
  LambdaGradient g = jacobian_of(lambda, ev);
  g -= lambda_score(lambda, ev.draw);
  return {std::move(g), Estimator::total, ev.log_weight()};
}

/// Doubly reparametrized IWLB gradient sum_k wtilde_k^2 grad_lambda r(s_k) grad log w_k.
/// Per-draw work may run on `threads` workers; the combine is in draw order.
template <Model M>
GradientEstimate dreg_gradient(const VariationalParams& lambda, const M& model,
                               std::span<const Vector> draws, unsigned threads = 1) {
  const std::size_t K = draws.size();
  if (K < 1) throw InvalidArgument("dreg_gradient: need at least one draw");
  std::vector<LambdaGradient> parts(K);
  Vector lw(static_cast<Index>(K));
  parallel_for(K, threads, [&](std::size_t k) {
    const auto ev = evaluate_sample(lambda, model, draws[k]);
    lw[static_cast<Index>(k)] = ev.log_weight();
    parts[k] = jacobian_of(lambda, ev);
  });
  const Vector wt = normalized_weights(lw);
  LambdaGradient g = LambdaGradient::zeros_like(lambda);
  for (std::size_t k = 0; k < K; ++k) {
    const double w = wt[static_cast<Index>(k)];
    g.add_scaled(w * w, parts[k]);
  }
  return {std::move(g), Estimator::dreg, iwlb_from_log_weights(lw)};
}

}  // namespace csgva
