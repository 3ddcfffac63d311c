#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace amaut {

// Deterministic random stream. Gaussian draws go through Box-Muller on the
// raw uniform bits so results do not depend on the standard library's
// distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream for (seed, sample, epoch) style keys.
  static RngStream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return RngStream(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL, a), b));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t state_word() const { return snapshot_; }

  void reseed(std::uint64_t seed) {
    engine_.seed(seed);
    snapshot_ = seed;
    have_spare_ = false;
  }

 private:
  static std::uint64_t mix(std::uint64_t x, std::uint64_t k) {
    x += k + 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t snapshot_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace amaut
