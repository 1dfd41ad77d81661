#pragma once

// Portable seeded random streams.
//
// Generator: xoshiro256** (Blackman & Vigna). Each stream is keyed by
// (seed, stream, index); the key is folded with the SplitMix64 finalizer and
// the four state words are the next four SplitMix64 outputs from that key.
// Uniform doubles take the top 53 bits. Normals use Box-Muller, gammas use
// Marsaglia-Tsang with the U^(1/a) boost for shape < 1. None of this depends
// on the standard library's distribution implementations, so output is a
// function of the seed alone.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace untangle {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Named stream ids so that independent draws never share a stream.
enum class Stream : std::uint64_t {
  Sample = 1,
  Member = 2,
  Materialize = 3,
  Mixture = 4,
  Embedding = 5,
  Severity = 6,
  Split = 7,
  Fuzz = 8,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) noexcept {
    std::uint64_t key = splitmix64_mix(seed + 0x9E3779B97F4A7C15ULL);
    key = splitmix64_mix(key ^ (stream * 0xD1B54A32D192ED03ULL));
    key = splitmix64_mix(key ^ (index + 0x8CB92BA72F3D8DD7ULL));
    for (auto& s : state_) {
      key += 0x9E3779B97F4A7C15ULL;
      s = splitmix64_mix(key);
    }
  }

  Rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept
      : Rng(seed, static_cast<std::uint64_t>(stream), index) {}

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1).
  double uniform_open() noexcept {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire-style rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Gamma(shape, 1). shape == 0 yields 0.
  double gamma(double shape) noexcept {
    if (shape <= 0.0) return 0.0;
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Dirichlet draw written into out; zero parameters give zero mass.
  void dirichlet(std::span<const double> beta, std::span<double> out) noexcept {
    double total = 0.0;
    for (std::size_t c = 0; c < beta.size(); ++c) {
      out[c] = gamma(beta[c]);
      total += out[c];
    }
    if (total > 0.0) {
      for (double& v : out) v /= total;
    } else {
      // Every gamma underflowed; fall back to the largest parameter.
      std::size_t best = 0;
      for (std::size_t c = 1; c < beta.size(); ++c) {
        if (beta[c] > beta[best]) best = c;
      }
      for (std::size_t c = 0; c < out.size(); ++c) out[c] = (c == best) ? 1.0 : 0.0;
    }
  }

  /// Categorical draw from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights) noexcept {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      if (u < weights[c]) return c;
      u -= weights[c];
    }
    for (std::size_t c = weights.size(); c-- > 0;) {
      if (weights[c] > 0.0) return c;
    }
    return 0;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace untangle
