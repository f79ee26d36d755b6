#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "deconf/common.hpp"
#include "deconf/matrix.hpp"

namespace deconf::numkit {

// Deterministic counter-seeded generator (xoshiro256++ core, splitmix64
// seeding). Identical seed gives a bit-identical draw sequence on every
// platform; split(tag) derives an independent stream from (seed, tag).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) { reseed(seed); }

  std::uint64_t seed() const { return seed_; }

  Rng split(std::uint64_t tag) const {
    return Rng(mix(seed_, 0x9e3779b97f4a7c15ULL ^ tag));
  }

  Rng split(std::string_view tag) const { return split(fnv1a(tag)); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) {
    // Modulo bias is negligible for n << 2^64.
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Standard normal via Box-Muller; the spare draw is cached in the stream
  // state.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  template <typename Seq>
  void shuffle(Seq& seq) {
    if (seq.empty()) return;
    for (std::size_t i = seq.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(next_u64() % (i + 1));
      std::swap(seq[i], seq[j]);
    }
  }

 private:
  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
    has_spare_ = false;
    spare_ = 0.0;
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(x);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Vector sample_standard_normal(Rng& rng, std::size_t n) {
  Vector v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Knuth product method; the rates here are O(1..10).
inline std::uint64_t sample_poisson(Rng& rng, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("poisson rate must be finite and >= 0");
  }
  if (lambda == 0.0) return 0;
  const double limit = std::exp(-lambda);
  std::uint64_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

inline int sample_bernoulli(Rng& rng, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("bernoulli probability must be in [0, 1]");
  }
  if (p >= 1.0) return 1;
  return rng.uniform() < p ? 1 : 0;
}

inline Matrix sample_normal_matrix(Rng& rng, std::size_t rows,
                                   std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (auto& x : m.data) x = stddev * rng.normal();
  return m;
}

}  // namespace deconf::numkit
