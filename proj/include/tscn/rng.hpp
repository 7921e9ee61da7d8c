#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace tscn {

/// splitmix64 output mixer (Stafford variant 13). mix64(0) == 0.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// Folds one key into a running hash. Used to derive stream ids from tuples
/// such as (stage, epoch, dataset index).
constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t key) noexcept {
  return mix64(h ^ mix64(key + kGoldenGamma));
}

/// Deterministic random stream.
///
/// The generator is plain splitmix64: every draw adds the golden gamma to the
/// 64-bit state and returns mix64(state). A stream is identified by
/// (seed, stream id); its initial state is `seed ^ mix64(stream_id)`, so stream
/// id 0 reproduces the published splitmix64 sequence for `seed`.
///
/// Streams are single-owner. Parallel work asks for `child(key)` streams,
/// which depend only on this stream's current state and the key, never on
/// how many draws other streams have made.
class RandomStream {
public:
  explicit constexpr RandomStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0) noexcept
      : state_(seed ^ mix64(stream_id)), stream_(stream_id) {}

  /// Stream keyed by a tuple, e.g. keyed(seed, {stage, epoch, index}).
  static constexpr RandomStream keyed(std::uint64_t seed,
                                      std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t id = 0;
    for (auto k : keys) id = hash_combine(id, k);
    return RandomStream(seed, id);
  }

  constexpr std::uint64_t next() noexcept {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  /// Independent child stream; does not advance this stream.
  [[nodiscard]] constexpr RandomStream child(std::uint64_t key) const noexcept {
    return RandomStream(state_, hash_combine(stream_, key));
  }

  constexpr std::uint64_t state() const noexcept { return state_; }
  constexpr std::uint64_t stream_id() const noexcept { return stream_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias. n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::uint64_t state_;
  std::uint64_t stream_;
};

} // namespace tscn
