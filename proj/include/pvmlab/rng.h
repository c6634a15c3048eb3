#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pvmlab {

// Seeded generator. Independent streams are derived from one root seed by
// name ("model-init", "data", "eval", ...) so each consumer can be reseeded
// without disturbing the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t root_seed, std::string_view name);
  static std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name);

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  // Number of failures before the first success, success probability p.
  int geometric(double p) {
    if (p >= 1.0) return 0;
    return std::geometric_distribution<int>(p)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pvmlab
