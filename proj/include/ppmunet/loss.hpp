// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_LOSS_HPP
#define PPMUNET_LOSS_HPP

#include <algorithm>
#include <vector>

#include "ppmunet/tensor.hpp"

namespace ppmunet {

/// Per-class weights of the generalized Dice loss.
struct ClassWeights {
  std::vector<double> values;

  /// background 1, drusen 70, OBRPE 20, BM 10; without drusen: 1, 20, 10.
  static ClassWeights defaults(std::size_t num_classes) {
    if (num_classes == 4) return {{1.0, 70.0, 20.0, 10.0}};
    if (num_classes == 3) return {{1.0, 20.0, 10.0}};
    throw ValidationError("no default class weights for " + std::to_string(num_classes) + " classes");
  }

  void validate(std::size_t num_classes) const {
    if (values.size() != num_classes)
      throw ValidationError("expected " + std::to_string(num_classes) + " class weights, got " +
                            std::to_string(values.size()));
    bool positive = false;
    for (double v : values) {
      if (!(v >= 0.0)) throw ValidationError("class weights must be non-negative");
      positive = positive || v > 0.0;
    }
    if (!positive) throw ValidationError("at least one class weight must be positive");
  }
};

template <typename T>
struct LossResult {
  double loss;
  Tensor4<T> grad;  // dL/dprobs
};

inline constexpr double kDiceDenominatorFloor = 1e-6;

/// Weighted generalized Dice loss over the whole batch:
///   L = -2 * sum_c w_c sum_n p_cn q_cn / sum_c w_c sum_n (p_cn + q_cn)
/// with q the one-hot target. The denominator is floored at 1e-6, so an
/// all-empty configuration yields L = 0 with zero gradient.
template <typename T>
LossResult<T> gdl_loss(const Tensor4<T>& probs, const LabelGrid& target, const ClassWeights& weights) {
  const std::size_t C = probs.c();
  weights.validate(C);
  if (target.n() != probs.n() || target.h() != probs.h() || target.w() != probs.w())
    throw ValidationError("gdl_loss: target dims do not match predictions " + to_string(probs.shape()));
  const std::size_t hw = probs.shape().plane();

  std::vector<double> inter(C, 0.0), total(C, 0.0);
  for (std::size_t b = 0; b < probs.n(); ++b) {
    auto lab = target.data().subspan(b * hw, hw);
    for (std::size_t c = 0; c < C; ++c) {
      auto p = probs.plane(b, c);
      double sp = 0.0, spq = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        if (lab[i] >= C) throw ValidationError("gdl_loss: label " + std::to_string(lab[i]) + " out of range");
        sp += static_cast<double>(p[i]);
        if (lab[i] == c) {
          spq += static_cast<double>(p[i]);
          sq += 1.0;
        }
      }
      inter[c] += spq;
      total[c] += sp + sq;
    }
  }
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    num += weights.values[c] * inter[c];
    den += weights.values[c] * total[c];
  }
  den = std::max(den, kDiceDenominatorFloor);
  LossResult<T> r{-2.0 * num / den, Tensor4<T>(probs.shape())};
  // dL/dp_cn = -2 w_c (q_cn * den - num) / den^2
  const double scale = -2.0 / (den * den);
  for (std::size_t c = 0; c < C; ++c) {
    const T miss = static_cast<T>(scale * weights.values[c] * -num);
    const T hit = static_cast<T>(scale * weights.values[c] * (den - num));
    for (std::size_t b = 0; b < probs.n(); ++b) {
      auto lab = target.data().subspan(b * hw, hw);
      auto g = r.grad.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) g[i] = lab[i] == c ? hit : miss;
    }
  }
  return r;
}

}  // namespace ppmunet

#endif  // PPMUNET_LOSS_HPP
