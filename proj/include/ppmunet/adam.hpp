// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_ADAM_HPP
#define PPMUNET_ADAM_HPP

#include <cmath>
#include <cstdint>

#include "ppmunet/network.hpp"

namespace ppmunet {

struct AdamHyper {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  Gradients<T> m;  // first moments, registry order
  Gradients<T> v;  // second moments

  static AdamState init(const ParamRegistry<T>& reg, AdamHyper h = {}) {
    return AdamState{h, 0, zero_gradients(reg), zero_gradients(reg)};
  }
};

/// One bias-corrected Adam update over all parameters in registry order.
template <typename T>
void adam_step(ParamRegistry<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: gradient/moment count does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params[i].value.shape() || state.m[i].shape() != params[i].value.shape() ||
        state.v[i].shape() != params[i].value.shape())
      throw ValidationError("adam_step: shape mismatch for " + params[i].name);

  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = h.beta1 * static_cast<double>(m[k]) + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * static_cast<double>(v[k]) + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = h.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + h.epsilon);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
    }
  }
}

/// Model overload: bumps the model version so existing tapes become stale.
template <typename T>
void adam_step(Model<T>& model, const Gradients<T>& grads, AdamState<T>& state) {
  adam_step(model.mutable_params(), grads, state);
}

}  // namespace ppmunet

#endif  // PPMUNET_ADAM_HPP
