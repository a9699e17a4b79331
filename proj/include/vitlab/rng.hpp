// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based SplitMix64 generator.
//
//   key      = mix(seed ^ mix(stream + 0x9E3779B97F4A7C15))
//   word(i)  = mix(key + (i + 1) * 0x9E3779B97F4A7C15)
//   mix(z)   : z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//              z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31
//
// Every draw is a pure function of (seed, stream, counter), so a port to
// another language reproduces the same shuffles and initial weights.

#pragma once

#include <cstdint>
#include <string_view>

namespace vitlab {

class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(seed ^ mix(stream + kGamma))) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  // FNV-1a; used to derive per-tensor streams from parameter paths.
  static constexpr std::uint64_t hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t at(std::uint64_t counter) const { return mix(key_ + (counter + 1) * kGamma); }
  std::uint64_t next() { return at(counter_++); }
  std::uint64_t counter() const { return counter_; }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform in (0, 1].
  double uniform_open0() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  // Unbiased draw in [0, n) by rejection on the top of the 64-bit range.
  std::uint64_t below(std::uint64_t n);

  // Box-Muller, cosine branch only; consumes two words per call.
  double normal();

  // Standard normal truncated to [-2, 2] by rejection.
  double truncated_normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vitlab
