#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>

namespace nflat {

/// Seedable generator owned by whoever needs randomness. There is no global
/// instance; pass one down explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string name = "rng") : name_(std::move(name)), engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream, e.g. one per training epoch.
  Rng fork(const std::string& child) {
    return Rng(engine_() ^ (std::hash<std::string>{}(child) * 0x9E3779B97F4A7C15ULL), name_ + "/" + child);
  }

  const std::string& name() const { return name_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::string name_;
  std::mt19937_64 engine_;
};

}  // namespace nflat
