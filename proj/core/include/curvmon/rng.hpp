#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace curvmon {

// Counter-based randomness: every draw is a pure function of
// (seed, stream, index, lane), so substreams need no shared state and any
// draw can be replayed out of order.

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index, std::uint64_t lane) noexcept {
  std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ULL);
  h = mix64(h ^ stream);
  h = mix64(h ^ (index * 0xd1b54a32d192ed03ULL));
  h = mix64(h ^ (lane * 0x8cb92ba72f3d8dd7ULL));
  return h;
}

/// Maps 64 random bits to a double in [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Sequential view over one (seed, stream, index) substream.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) noexcept
      : seed_(seed), stream_(stream), index_(index) {}

  constexpr std::uint64_t next_u64() noexcept { return hash_key(seed_, stream_, index_, lane_++); }

  double uniform() noexcept { return to_unit(next_u64()); }

  /// Uniform integer in [0, n), n > 0. Lemire's multiply-shift; bias is below 2^-64 * n.
  std::uint64_t below(std::uint64_t n) noexcept {
    __extension__ using Wide = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<Wide>(next_u64()) * n) >> 64);
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t lane() const noexcept { return lane_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_;
  std::uint64_t lane_ = 0;
};

}  // namespace curvmon
