#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace selfe {

/// Deterministic random stream. Gaussian draws go through an explicit
/// Box-Muller transform instead of std::normal_distribution, whose output
/// sequence is implementation-defined; this keeps sample streams stable
/// across standard libraries for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_base_(seed), engine_(mix(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent child stream; distinct salts give distinct streams.
  Rng child(std::uint64_t salt) const {
    return Rng(seed_base_ ^ (0x9e3779b97f4a7c15ull + salt * 0xbf58476d1ce4e5b9ull));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer; decorrelates nearby seeds.
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_base_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace selfe
