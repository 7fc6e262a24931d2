#pragma once

// Counter-derived random streams. Every standard-normal vector is produced by
// its own generator seeded from (seed, domain, stream, index), so the draws for
// a given iteration and sample slot do not depend on how work is scheduled.

#include "csgva/types.hpp"

#include <cstdint>
#include <random>

namespace csgva {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Purposes that must never share draws.
enum class StreamDomain : std::uint64_t {
  training = 1,
  bound_estimate = 2,
  posterior = 3,
  test = 4,
};

inline std::uint64_t substream_seed(std::uint64_t seed, StreamDomain domain, std::uint64_t stream,
                                    std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(domain));
  h = splitmix64(h ^ stream);
  return splitmix64(h ^ (index * 0xd1b54a32d192ed03ULL));
}

inline Vector standard_normal(Index dim, std::uint64_t stream_seed) {
  std::mt19937_64 gen(stream_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector out(dim);
  for (Index i = 0; i < dim; ++i) out[i] = normal(gen);
  return out;
}

inline Vector standard_normal(Index dim, std::uint64_t seed, StreamDomain domain,
                              std::uint64_t stream, std::uint64_t index) {
  return standard_normal(dim, substream_seed(seed, domain, stream, index));
}

}  // namespace csgva
