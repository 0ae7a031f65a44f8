#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rooted {

// 64-bit FNV-1a. Used for stream labels and file digests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// splitmix64 finalizer; mixes a 64-bit value into a well-spread seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// A deterministic random stream. The engine is mt19937_64, whose output
// sequence is fixed by the standard, and all distributions below are
// implemented explicitly so results are identical across platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (-n) % n;  // 2^64 mod n
    std::uint64_t v;
    do {
      v = eng_();
    } while (v < threshold);
    return v % n;
  }

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang squeeze.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      double u;
      do {
        u = uniform01();
      } while (u <= 0.0);
      return g * std::pow(u, 1.0 / shape);
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
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Beta(a, b) as the ratio of two gamma draws.
  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Uniform random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::uint32_t> permutation(std::uint32_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
    for (std::uint32_t i = n; i > 1; --i) {
      const auto j = static_cast<std::uint32_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

// Fans a single master seed out into independent named substreams, so a
// whole run is a pure function of (inputs, parameters, seed). Streams used
// by the library, in consumption order where it matters:
//   "ties"       argmin tie-breaks, per community in index order
//   "partition"  greedy partition tie-breaks
//   "order"      ordering tie-breaks for matched representatives
//   "perm"       sampled permutations
//   "er", "noise", "treat"  simulation draws, indexed per community/draw
class Seeder {
 public:
  explicit Seeder(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const { return master_; }

  RngStream stream(std::string_view label) const {
    return RngStream(mix64(master_ ^ fnv1a64(label)));
  }

  RngStream stream(std::string_view label, std::uint64_t index) const {
    return RngStream(mix64(mix64(master_ ^ fnv1a64(label)) ^ index));
  }

  Seeder derive(std::string_view label, std::uint64_t index) const {
    return Seeder(mix64(mix64(master_ ^ fnv1a64(label)) ^ index));
  }

 private:
  std::uint64_t master_;
};

}  // namespace rooted
