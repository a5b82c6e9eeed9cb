// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_TENSOR_HPP
#define PPMUNET_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppmunet/error.hpp"

namespace ppmunet {

/// Extents of a rank-4 array laid out (batch, channel, row, column), column fastest.
struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() : data_(1, T{0}) {}

  explicit Tensor4(Shape4 shape, T fill = T{0}) : shape_(shape) {
    check_dims(shape);
    data_.assign(shape.size(), fill);
  }

  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_dims(shape);
    if (data_.size() != shape.size())
      throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + ppmunet::to_string(shape));
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_.n; }
  std::size_t c() const noexcept { return shape_.c; }
  std::size_t h() const noexcept { return shape_.h; }
  std::size_t w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const noexcept {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }

  T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) noexcept {
    return data_[index(b, ch, y, x)];
  }
  const T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const noexcept {
    return data_[index(b, ch, y, x)];
  }

  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    bounds(b, ch, y, x);
    return (*this)(b, ch, y, x);
  }
  const T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    bounds(b, ch, y, x);
    return (*this)(b, ch, y, x);
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vector() const noexcept { return data_; }

  /// All channels of sample b.
  std::span<T> sample(std::size_t b) noexcept {
    return std::span<T>(data_).subspan(b * shape_.sample(), shape_.sample());
  }
  std::span<const T> sample(std::size_t b) const noexcept {
    return std::span<const T>(data_).subspan(b * shape_.sample(), shape_.sample());
  }

  std::span<T> plane(std::size_t b, std::size_t ch) noexcept {
    return std::span<T>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }
  std::span<const T> plane(std::size_t b, std::size_t ch) const noexcept {
    return std::span<const T>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor4<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_dims(const Shape4& s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
      throw ValidationError("tensor dims must be >= 1, got " + ppmunet::to_string(s));
  }
  void bounds(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    if (b >= shape_.n || ch >= shape_.c || y >= shape_.h || x >= shape_.w)
      throw ValidationError("index out of range for shape " + ppmunet::to_string(shape_));
  }

  Shape4 shape_{};
  std::vector<T> data_;
};

/// Segmentation classes, rows increasing downward.
enum class Class : std::uint8_t { background = 0, drusen = 1, obrpe = 2, bm = 3 };
inline constexpr std::size_t kNumClasses = 4;

/// Per-pixel class ids, laid out (batch, row, column).
class LabelGrid {
 public:
  LabelGrid() : data_(1, 0) {}
  LabelGrid(std::size_t n, std::size_t h, std::size_t w, std::uint8_t fill = 0) : n_(n), h_(h), w_(w) {
    if (n == 0 || h == 0 || w == 0) throw ValidationError("label grid dims must be >= 1");
    data_.assign(n * h * w, fill);
  }
  LabelGrid(std::size_t n, std::size_t h, std::size_t w, std::vector<std::uint8_t> data)
      : n_(n), h_(h), w_(w), data_(std::move(data)) {
    if (n == 0 || h == 0 || w == 0) throw ValidationError("label grid dims must be >= 1");
    if (data_.size() != n * h * w) throw ValidationError("label grid data length mismatch");
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t h() const noexcept { return h_; }
  std::size_t w() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t& operator()(std::size_t b, std::size_t y, std::size_t x) noexcept {
    return data_[(b * h_ + y) * w_ + x];
  }
  std::uint8_t operator()(std::size_t b, std::size_t y, std::size_t x) const noexcept {
    return data_[(b * h_ + y) * w_ + x];
  }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  /// Single B-scan view copy.
  LabelGrid slice(std::size_t b) const {
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(b * h_ * w_);
    return LabelGrid(1, h_, w_, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(h_ * w_)));
  }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;

 private:
  std::size_t n_ = 1, h_ = 1, w_ = 1;
  std::vector<std::uint8_t> data_;
};

/// Expands labels to a (n, num_classes, h, w) indicator tensor.
template <typename T>
Tensor4<T> one_hot(const LabelGrid& labels, std::size_t num_classes) {
  Tensor4<T> out(Shape4{labels.n(), num_classes, labels.h(), labels.w()});
  for (std::size_t b = 0; b < labels.n(); ++b)
    for (std::size_t y = 0; y < labels.h(); ++y)
      for (std::size_t x = 0; x < labels.w(); ++x) {
        const std::size_t c = labels(b, y, x);
        if (c >= num_classes)
          throw ValidationError("label " + std::to_string(c) + " out of range at (" + std::to_string(b) +
                                "," + std::to_string(y) + "," + std::to_string(x) + ") for " +
                                std::to_string(num_classes) + " classes");
        out(b, c, y, x) = T{1};
      }
  return out;
}

/// Per-pixel channel argmax; exact ties resolve to the lowest channel.
template <typename T>
LabelGrid argmax_channels(const Tensor4<T>& probs) {
  LabelGrid out(probs.n(), probs.h(), probs.w());
  const std::size_t hw = probs.shape().plane();
  for (std::size_t b = 0; b < probs.n(); ++b) {
    auto dst = out.data().subspan(b * hw, hw);
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      T best_v = probs.plane(b, 0)[i];
      for (std::size_t c = 1; c < probs.c(); ++c) {
        const T v = probs.plane(b, c)[i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      dst[i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_TENSOR_HPP
