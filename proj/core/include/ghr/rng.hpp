#pragma once

#include <cstdint>
#include <cmath>

namespace ghr {

// PCG32 (XSH-RR variant, O'Neill 2014). Chosen over std::mt19937 +
// std::*_distribution because the stream is bit-identical across standard
// library implementations. Gaussian variates use Box-Muller with a cached
// spare. All stochastic code in this project draws from this generator
// with an explicit seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) { reseed(seed, stream); }

  void reseed(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
    have_spare_ = false;
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Uniform in [0, 1) with 24 bits of mantissa.
  double uniform() { return (next_u32() >> 8) * 0x1p-24; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint32_t below(std::uint32_t n) {
    // Lemire-style rejection to avoid modulo bias.
    std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * n;
    std::uint32_t lo = static_cast<std::uint32_t>(m);
    if (lo < n) {
      std::uint32_t t = (-n) % n;
      while (lo < t) {
        m = static_cast<std::uint64_t>(next_u32()) * n;
        lo = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

  double gaussian(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
    double u2 = static_cast<double>(next_u32()) * 0x1p-32;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ghr
