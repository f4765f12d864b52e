// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace rshe {

// Philox4x32-10 (Salmon et al., SC'11). Stateless: the output is a pure
// function of (counter, key), so any draw can be regenerated in isolation.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

// SplitMix64 finalizer; used to fold structured identifiers into one stream id.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix_stream_id(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (const auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// One reproducible random stream. Key = run seed, counter = (step, index,
// stream id). Draws never depend on how many other streams were consumed
// or on which thread consumes them.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_lo_(static_cast<std::uint32_t>(stream_id)),
        stream_hi_(static_cast<std::uint32_t>(stream_id >> 32)) {}

  // Uniform on the open interval (0, 1).
  double uniform(std::uint64_t step, std::uint32_t index) const noexcept {
    const auto r = raw(step, index);
    return to_open_unit(r[0], r[1]);
  }

  // Standard normal (Box-Muller, cosine branch).
  double normal(std::uint64_t step, std::uint32_t index) const noexcept {
    const auto r = raw(step, index);
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t stream_id() const noexcept {
    return (std::uint64_t{stream_hi_} << 32) | stream_lo_;
  }

 private:
  Philox4x32::Counter raw(std::uint64_t step, std::uint32_t index) const noexcept {
    // step is folded into 32 bits together with its high word; meshes never
    // exceed 2^32 steps.
    const auto step32 = static_cast<std::uint32_t>(step ^ (step >> 32));
    return Philox4x32::generate({step32, index, stream_lo_, stream_hi_}, key_);
  }

  static double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_lo_;
  std::uint32_t stream_hi_;
};

}  // namespace rshe
