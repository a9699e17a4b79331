// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vitlab {

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("CounterRng::below(0)");
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  for (;;) {
    const std::uint64_t r = next();
    if (r < limit) return r % n;
  }
}

double CounterRng::normal() {
  const double u1 = uniform_open0();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::truncated_normal() {
  for (;;) {
    const double z = normal();
    if (z >= -2.0 && z <= 2.0) return z;
  }
}

}  // namespace vitlab
