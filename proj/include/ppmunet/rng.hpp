// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_RNG_HPP
#define PPMUNET_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

#include "ppmunet/tensor.hpp"

namespace ppmunet {

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Mixes an ordered list of integers into one stream id.
constexpr std::uint64_t stream_id(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = detail::splitmix64(h ^ detail::splitmix64(p));
  return h;
}

/// Counter-based generator: value i of (seed, stream) is a pure function of
/// (seed, stream, i), so sequences are identical on every platform and
/// independent streams never share state.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream), key_(detail::splitmix64(seed ^ detail::splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    return detail::splitmix64(key_ + 0xd1b54a32d192ed03ULL * ++counter_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = next_u64();
    while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller; always consumes two uniforms.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Knuth's multiplication method; fine for the small rates used here.
  unsigned poisson(double rate) noexcept {
    if (rate <= 0.0) return 0;
    const double limit = std::exp(-rate);
    unsigned k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }

  /// Child stream keyed by id; does not advance this stream.
  RngStream fork(std::uint64_t id) const { return RngStream(seed_, stream_id({stream_, id})); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// He-normal initialization: i.i.d. N(0, 2 / fan_in).
template <typename T>
Tensor4<T> he_normal_init(Shape4 dims, std::size_t fan_in, RngStream& rng) {
  if (fan_in < 1) throw ValidationError("he_normal_init: fan_in must be >= 1");
  Tensor4<T> out(dims);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : out.data()) v = static_cast<T>(sd * rng.normal());
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_RNG_HPP
