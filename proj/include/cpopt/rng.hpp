#pragma once

#include <cstdint>
#include <random>

namespace cpopt {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Sub-stream seed for task `index` under `seed`. Every parallelizable unit of
// work draws from its own derived stream, so serial and parallel execution
// consume identical random numbers.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Stage tags used to carve independent streams out of one run seed.
enum class Stream : std::uint64_t {
  kData = 1,
  kSplit = 2,
  kEnsemble = 3,
  kAugment = 4,
  kPolicyInit = 5,
  kPolicyTrain = 6,
  kGa = 7,
  kHybrid = 8,
  kLoggingEval = 9,
  kPolicyEval = 10,
  kFarActions = 11,
};

constexpr std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
  // Separate family from derive_seed(seed, i) so stage streams never alias task indices.
  return derive_seed(splitmix64(seed ^ 0x6a09e667f3bcc909ULL), static_cast<std::uint64_t>(stream));
}

}  // namespace cpopt
