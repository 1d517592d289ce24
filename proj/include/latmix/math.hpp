#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace latmix {

inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kInvSqrtTwoPi = 0.39894228040143267794;
inline constexpr double kSqrtTwo = 1.4142135623730950488;
inline constexpr double kLogHalf = -0.69314718055994530942;
inline constexpr double kLogSqrtPi = 0.57236494292470008707;

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double std_normal_pdf(double z) {
  return kInvSqrtTwoPi * std::exp(-0.5 * z * z);
}

inline double log_std_normal_pdf(double z) {
  return -0.5 * (kLogTwoPi + z * z);
}

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrtTwo); }

inline double std_normal_ccdf(double z) { return 0.5 * std::erfc(z / kSqrtTwo); }

// log(erfc(x)) without underflow. erfc underflows near x = 26.6; beyond the
// cutoff the asymptotic series erfc(x) ~ exp(-x^2)/(x sqrt(pi)) * S(1/x^2)
// keeps full double precision.
inline double log_erfc(double x) {
  if (x < 20.0) return std::log(std::erfc(x));
  const double inv2 = 1.0 / (x * x);
  const double series =
      1.0 + inv2 * (-0.5 + inv2 * (0.75 + inv2 * (-1.875 + inv2 * 6.5625)));
  return -x * x - std::log(x) - kLogSqrtPi + std::log(series);
}

// log P[Z > z] for standard normal Z; finite for any representable z.
inline double log_std_normal_ccdf(double z) {
  return kLogHalf + log_erfc(z / kSqrtTwo);
}

inline double log_sum_exp(std::span<const double> values) {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : values) best = std::max(best, v);
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - best);
  return best + std::log(acc);
}

// splitmix64 finalizer; used to derive independent seeds for sub-streams
// (ensemble members, noise, shuffling) from one user-facing seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. All transforms are explicit (no std::*_distribution,
// whose output is implementation-defined), so identical seeds give identical
// streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1).
  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, bound); masked rejection, bias-free.
  std::uint64_t bounded(std::uint64_t bound) {
    if (bound <= 1) return 0;
    std::uint64_t mask = ~std::uint64_t{0};
    mask >>= std::countl_zero(bound - 1);
    std::uint64_t value;
    do {
      value = engine_() & mask;
    } while (value >= bound);
    return value;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace latmix
