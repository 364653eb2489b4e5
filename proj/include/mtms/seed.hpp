#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace mtms {

using Rng = std::mt19937_64;

/// Named random streams. A stream id is mixed into the experiment seed so
/// that every random decision has its own reproducible sub-seed.
enum class Stream : std::uint64_t {
  kPhantom = 1,
  kCorruption = 2,
  kSplit = 3,
  kFold = 4,
  kLabelled = 5,
  kTeacherInit = 6,
  kTeacherShuffle = 7,
  kStudentInit = 8,
  kStudentShuffle = 9,
  kAggregatorInit = 10,
  kDomain = 11,
  kTest = 12,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Sub-seed for (stream, index) under a base seed:
///   splitmix64(splitmix64(base ^ stream * 0x9E3779B97F4A7C15) + index).
/// Stable across platforms and releases; changing it invalidates every
/// stored artifact.
std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

/// Uniform real in [lo, hi) computed directly from the generator's bits so
/// the value does not depend on the standard library's distribution code.
double uniform(Rng& rng, double lo, double hi);

/// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

/// Standard normal via Box-Muller on uniform().
double normal(Rng& rng);

/// Fisher-Yates shuffle driven by uniform_int().
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mtms
