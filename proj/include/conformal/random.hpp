#pragma once

// Deterministic randomness. std::mt19937_64 is bit-exact across platforms,
// but the standard distribution objects are not, so the distribution
// transforms are implemented here by hand. Seeds for independent purposes
// (data splits, clustering restarts, tie-break coin flips, ...) are derived
// from one master seed through a splitmix64 chain so that no two streams
// collide and every run is reproducible from a single integer.

#include <cstdint>
#include <random>
#include <vector>

#include "conformal/common.hpp"

namespace conformal {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Labeled sub-stream purposes. Each purpose gets a disjoint seed lane.
enum class seed_purpose : std::uint64_t {
  split = 1,        ///< shuffling for the proper-calibration split
  clustering = 2,   ///< k-means initialisation and restarts
  bernoulli = 3,    ///< randomized-threshold coin flips
  sample = 4,       ///< drawing calibration sets from a pool
  synth = 5,        ///< synthetic data generation
  cal_score = 6,    ///< score randomisation (u draws) on calibration rows
  eval_score = 7,   ///< score randomisation (u draws) on evaluation rows
  rep = 8,          ///< per-repetition master seeds inside a sweep
  restart = 9,      ///< per-restart seeds inside k-means
};

/// Derive the seed for (master, purpose, index). Two invocations agree iff
/// all three inputs agree.
inline std::uint64_t derive_seed(std::uint64_t master, seed_purpose purpose,
                                 std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(master ^ 0xA0761D6478BD642FULL);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(purpose) * 0xE7037ED1A0B428DBULL);
  h = detail::splitmix64(h ^ index * 0x8EBC6AF09C88C6E3ULL);
  return h;
}

/// Random generator with hand-rolled, platform-stable transforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in the open interval (0, 1); safe under log().
  double uniform01_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Uses the fixed-point multiply reduction,
  /// which is deterministic and bias-negligible for our ranges.
  std::uint64_t below(std::uint64_t n) {
    detail::require(n > 0, "Rng::below requires n > 0");
    const unsigned __int128 m =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller (cosine branch only, so each call
  /// consumes exactly two uniforms).
  double normal() {
    const double u1 = uniform01_open();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape) {
    detail::require(shape > 0.0, "gamma shape must be positive");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform01_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Beta(a, b) as a gamma ratio.
  double beta(double a, double b) {
    const double ga = gamma(a);
    const double gb = gamma(b);
    return ga / (ga + gb);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace conformal
