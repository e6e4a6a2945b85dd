#pragma once

#include <cstdint>
#include <random>

namespace trust {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `stream` at position `index` of a run seeded with `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) + index);
}

// Stream tags for derive_seed.
namespace streams {
inline constexpr std::uint64_t kOperator = 0x4f50;
inline constexpr std::uint64_t kNoise = 0x4e4f;
inline constexpr std::uint64_t kSignal = 0x5349;
inline constexpr std::uint64_t kTarget = 0x5441;
inline constexpr std::uint64_t kInit = 0x494e;
inline constexpr std::uint64_t kShuffle = 0x5348;
inline constexpr std::uint64_t kTrial = 0x5452;
inline constexpr std::uint64_t kMask = 0x4d41;
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace trust
