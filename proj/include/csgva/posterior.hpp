#pragma once

#include "csgva/family.hpp"
#include "csgva/parallel.hpp"
#include "csgva/random.hpp"

#include <cmath>
#include <cstdint>
#include <optional>

namespace csgva {

struct PosteriorSummary {
  Vector global_mean;
  Vector global_sd;
  Vector local_mean;
  Vector local_sd;
  /// One draw per row, (thetaG, thetaL), when requested.
  std::optional<Matrix> samples;
};

/// Ancestral sampling: thetaG ~ q(thetaG), then thetaL ~ q(thetaL | thetaG).
inline PosteriorSummary sample_posterior(const VariationalParams& lambda, int count,
                                         std::uint64_t seed, bool keep_samples = false,
                                         unsigned threads = 1) {
  if (count < 2) throw InvalidArgument("sample_posterior: count must be at least 2");
  const Index G = lambda.global_dim();
  const Index dim = G + lambda.local_dim();
  Matrix draws(count, dim);
  parallel_for(static_cast<std::size_t>(count), threads, [&](std::size_t r) {
    const Vector s = standard_normal(dim, seed, StreamDomain::posterior, r, 0);
    draws.row(static_cast<Index>(r)) = reparam(lambda, s).theta().transpose();
  });
  const Vector mean = draws.colwise().mean().transpose();
  Vector sd(dim);
  for (Index j = 0; j < dim; ++j) {
    sd[j] = std::sqrt((draws.col(j).array() - mean[j]).square().sum() / (count - 1));
  }
  PosteriorSummary out;
  out.global_mean = mean.head(G);
  out.global_sd = sd.head(G);
  out.local_mean = mean.tail(dim - G);
  out.local_sd = sd.tail(dim - G);
  if (keep_samples) out.samples = std::move(draws);
  return out;
}

}  // namespace csgva
