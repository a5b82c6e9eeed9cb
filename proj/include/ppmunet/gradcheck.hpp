// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_GRADCHECK_HPP
#define PPMUNET_GRADCHECK_HPP

// Central finite-difference verification of every adjoint, in 64-bit.
// Error metric: |analytic - numeric| / max(1, |analytic| + |numeric|),
// step 1e-5 * (1 + |value|).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ppmunet/loss.hpp"
#include "ppmunet/network.hpp"
#include "ppmunet/ops.hpp"

namespace ppmunet {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::string op_filter;          // run only ops whose name starts with this
  std::string inject_sign_error;  // negate the analytic gradient of this op
  double op_tolerance = 1e-4;
  double loss_tolerance = 1e-6;
  double end_to_end_tolerance = 1e-3;
  std::size_t min_coords = 20;
  std::size_t end_to_end_coords = 25;
};

struct GradcheckResult {
  std::string op;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;
  std::size_t excluded = 0;
  bool pass = false;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

inline double fd_step(double v) { return 1e-5 * (1.0 + std::abs(v)); }

namespace gradcheck_detail {

using Tensor = Tensor4<double>;
using Inputs = std::vector<Tensor>;

struct OpCase {
  Inputs inputs;
  std::function<Tensor(const Inputs&)> forward;
  std::function<Inputs(const Inputs&, const Tensor&)> backward;  // gradient per input
  std::function<bool(const Inputs&, std::size_t, std::size_t, double)> near_kink;
};

inline Tensor random_tensor(Shape4 s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::size_t dim(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

// Objective L = sum(r * f(inputs)); checks every coordinate of every input.
inline GradcheckResult check_case(const std::string& name, OpCase c, RngStream& rng, double tol, bool flip) {
  GradcheckResult res{name, 0.0, tol, 0, 0, false};
  const Tensor y0 = c.forward(c.inputs);
  const Tensor r = random_tensor(y0.shape(), rng);
  Inputs grads = c.backward(c.inputs, r);
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    for (std::size_t i = 0; i < c.inputs[k].size(); ++i) {
      double& v = c.inputs[k].data()[i];
      const double orig = v, h = fd_step(orig);
      if (c.near_kink && c.near_kink(c.inputs, k, i, h)) {
        ++res.excluded;
        continue;
      }
      v = orig + h;
      const double fp = weighted_sum(c.forward(c.inputs), r);
      v = orig - h;
      const double fm = weighted_sum(c.forward(c.inputs), r);
      v = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = (flip ? -1.0 : 1.0) * grads[k].data()[i];
      res.worst = std::max(res.worst, relative_error(analytic, numeric));
      ++res.coords;
    }
  }
  return res;
}

inline std::span<const double> vec(const Tensor& t) { return t.data(); }

inline OpCase conv_case(RngStream& rng, std::size_t k) {
  const std::size_t n = dim(rng, 1, 2), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
  const std::size_t h = dim(rng, 2, 6), w = dim(rng, 2, 6);
  OpCase c;
  c.inputs = {random_tensor({n, ci, h, w}, rng), random_tensor({co, ci, k, k}, rng), random_tensor({co, 1, 1, 1}, rng)};
  c.forward = [](const Inputs& in) { return conv2d(in[0], in[1], vec(in[2])); };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape()), Tensor(in[1].shape()), Tensor(in[2].shape())};
    conv2d_backward(in[0], in[1], dy, &g[0], g[1], g[2].data());
    return g;
  };
  return c;
}

inline OpCase tconv_case(RngStream& rng) {
  const std::size_t n = dim(rng, 1, 2), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
  const std::size_t h = dim(rng, 1, 3), w = dim(rng, 1, 3);
  OpCase c;
  c.inputs = {random_tensor({n, ci, h, w}, rng), random_tensor({ci, co, 2, 2}, rng), random_tensor({co, 1, 1, 1}, rng)};
  c.forward = [](const Inputs& in) { return tconv2x2(in[0], in[1], vec(in[2])); };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape()), Tensor(in[1].shape()), Tensor(in[2].shape())};
    tconv2x2_backward(in[0], in[1], dy, &g[0], g[1], g[2].data());
    return g;
  };
  return c;
}

inline OpCase relu_case(RngStream& rng) {
  OpCase c;
  c.inputs = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 6), dim(rng, 2, 6)}, rng)};
  c.forward = [](const Inputs& in) { return relu(in[0]); };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape())};
    relu_backward(in[0], dy, g[0]);
    return g;
  };
  c.near_kink = [](const Inputs& in, std::size_t, std::size_t i, double h) { return std::abs(in[0].data()[i]) <= 2 * h; };
  return c;
}

inline OpCase maxpool_case(RngStream& rng) {
  OpCase c;
  c.inputs = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 3), 2 * dim(rng, 1, 3), 2 * dim(rng, 1, 3)}, rng)};
  c.forward = [](const Inputs& in) { return maxpool2x2(in[0]).out; };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape())};
    maxpool2x2_backward<double>(maxpool2x2(in[0]).argmax, dy, g[0]);
    return g;
  };
  // Excluded when another element of the same window is within reach of the step.
  c.near_kink = [](const Inputs& in, std::size_t, std::size_t i, double h) {
    const Tensor& x = in[0];
    const std::size_t w = x.w(), plane = x.h() * w;
    const std::size_t base = i - i % plane, off = i % plane;
    const std::size_t y0 = (off / w) & ~std::size_t{1}, x0 = (off % w) & ~std::size_t{1};
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t j = base + (y0 + dy) * w + x0 + dx;
        if (j != i && std::abs(x.data()[j] - x.data()[i]) <= 2 * h) return true;
      }
    return false;
  };
  return c;
}

inline OpCase avgpool_case(RngStream& rng) {
  const std::size_t bins = dim(rng, 1, 7);
  OpCase c;
  c.inputs = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 6), dim(rng, 2, 6)}, rng)};
  c.forward = [bins](const Inputs& in) { return adaptive_avg_pool(in[0], bins); };
  c.backward = [bins](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape())};
    adaptive_avg_pool_backward(dy, g[0]);
    (void)bins;
    return g;
  };
  return c;
}

inline OpCase upsample_case(RngStream& rng) {
  const std::size_t h = dim(rng, 1, 4), w = dim(rng, 1, 4);
  const std::size_t th = dim(rng, h, 6), tw = dim(rng, w, 6);
  OpCase c;
  c.inputs = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 3), h, w}, rng)};
  c.forward = [th, tw](const Inputs& in) { return upsample_nearest(in[0], th, tw); };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape())};
    upsample_nearest_backward(dy, g[0]);
    return g;
  };
  return c;
}

inline OpCase concat_case(RngStream& rng) {
  const std::size_t n = dim(rng, 1, 2), h = dim(rng, 1, 6), w = dim(rng, 1, 6), parts = dim(rng, 2, 3);
  OpCase c;
  for (std::size_t p = 0; p < parts; ++p) c.inputs.push_back(random_tensor({n, dim(rng, 1, 3), h, w}, rng));
  c.forward = [](const Inputs& in) {
    std::vector<const Tensor*> ptrs;
    for (const auto& t : in) ptrs.push_back(&t);
    return concat_channels<double>(std::span<const Tensor* const>(ptrs));
  };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g;
    for (const auto& t : in) g.emplace_back(t.shape());
    std::vector<Tensor*> ptrs;
    for (auto& t : g) ptrs.push_back(&t);
    concat_channels_backward<double>(dy, std::span<Tensor* const>(ptrs));
    return g;
  };
  return c;
}

inline OpCase softmax_case(RngStream& rng) {
  OpCase c;
  c.inputs = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 5), dim(rng, 1, 6), dim(rng, 1, 6)}, rng, -3.0, 3.0)};
  c.forward = [](const Inputs& in) { return softmax_channels(in[0]); };
  c.backward = [](const Inputs& in, const Tensor& dy) {
    Inputs g{Tensor(in[0].shape())};
    softmax_channels_backward(softmax_channels(in[0]), dy, g[0]);
    return g;
  };
  return c;
}

template <typename Make>
GradcheckResult run_op(const std::string& name, Make make, RngStream& rng, const GradcheckOptions& o) {
  // Three randomized cases, each redrawn until it exposes enough coordinates.
  GradcheckResult total{name, 0.0, o.op_tolerance, 0, 0, false};
  for (int accepted = 0; accepted < 3;) {
    OpCase c = make(rng);
    std::size_t size = 0;
    for (const auto& t : c.inputs) size += t.size();
    if (size < o.min_coords + 4) continue;
    const GradcheckResult r = check_case(name, std::move(c), rng, o.op_tolerance, o.inject_sign_error == name);
    if (r.coords < o.min_coords) continue;
    total.worst = std::max(total.worst, r.worst);
    total.coords += r.coords;
    total.excluded += r.excluded;
    ++accepted;
  }
  total.pass = total.worst <= total.tolerance;
  return total;
}

inline LabelGrid random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t classes, RngStream& rng) {
  LabelGrid g(n, h, w);
  for (auto& v : g.data()) v = static_cast<std::uint8_t>(rng.below(classes));
  return g;
}

// Random points on the probability simplex, per pixel.
inline Tensor random_simplex(Shape4 s, RngStream& rng) {
  Tensor t = random_tensor(s, rng, 0.05, 1.0);
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) sum += t.plane(b, c)[i];
      for (std::size_t c = 0; c < s.c; ++c) t.plane(b, c)[i] /= sum;
    }
  return t;
}

inline GradcheckResult run_loss(RngStream& rng, const GradcheckOptions& o) {
  const std::string name = "gdl_loss";
  GradcheckResult res{name, 0.0, o.loss_tolerance, 0, 0, false};
  const ClassWeights wts = ClassWeights::defaults(4);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor p = random_simplex({1, 4, 2, 2}, rng);
    const LabelGrid q = random_labels(1, 2, 2, 4, rng);
    const auto analytic = gdl_loss(p, q, wts).grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& v = p.data()[i];
      const double orig = v, h = fd_step(orig);
      v = orig + h;
      const double fp = gdl_loss(p, q, wts).loss;
      v = orig - h;
      const double fm = gdl_loss(p, q, wts).loss;
      v = orig;
      const double a = (o.inject_sign_error == name ? -1.0 : 1.0) * analytic.data()[i];
      res.worst = std::max(res.worst, relative_error(a, (fp - fm) / (2.0 * h)));
      ++res.coords;
    }
  }
  res.pass = res.worst <= res.tolerance;
  return res;
}

}  // namespace gradcheck_detail

/// Tiny pyramid model used by the end-to-end check: depth 2, 4 base maps, 16x16.
inline ModelConfig end_to_end_config() {
  ModelConfig cfg;
  cfg.variant = Variant::unetppm;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  return cfg;
}

/// Loss-through-network check on randomly chosen parameter coordinates.
inline GradcheckResult end_to_end_gradcheck(const GradcheckOptions& o, RngStream& rng,
                                            const ModelConfig& cfg = end_to_end_config()) {
  using namespace gradcheck_detail;
  const std::string name = "end_to_end";
  GradcheckResult res{name, 0.0, o.end_to_end_tolerance, 0, 0, false};
  Model<double> model = build_model<double>(cfg, rng);
  // Nonzero biases so no bias gradient is trivially checked at a symmetric point.
  for (std::size_t i = 0; i < model.params().size(); ++i)
    if (model.params()[i].is_vector)
      for (double& v : model.mutable_params()[i].value.data()) v = rng.uniform(-0.1, 0.1);
  Tensor x({2, 1, cfg.input_h, cfg.input_w});
  for (double& v : x.data()) v = rng.normal();
  const LabelGrid target = random_labels(2, cfg.input_h, cfg.input_w, cfg.num_classes(), rng);
  const ClassWeights wts = ClassWeights::defaults(cfg.num_classes());

  auto loss_of = [&](const Model<double>& m) { return gdl_loss(forward(m, x).probs, target, wts).loss; };
  const auto fwd = forward(model, x);
  const auto lr = gdl_loss(fwd.probs, target, wts);
  const Gradients<double> grads = backward(model, fwd, lr.grad);

  for (std::size_t s = 0; s < o.end_to_end_coords; ++s) {
    const std::size_t pi = rng.below(model.params().size());
    const std::size_t ci = rng.below(model.params()[pi].value.size());
    const double orig = model.params()[pi].value.data()[ci], h = fd_step(orig);
    model.mutable_params()[pi].value.data()[ci] = orig + h;
    const double fp = loss_of(model);
    model.mutable_params()[pi].value.data()[ci] = orig - h;
    const double fm = loss_of(model);
    model.mutable_params()[pi].value.data()[ci] = orig;
    const double a = (o.inject_sign_error == name ? -1.0 : 1.0) * grads[pi].data()[ci];
    res.worst = std::max(res.worst, relative_error(a, (fp - fm) / (2.0 * h)));
    ++res.coords;
  }
  res.pass = res.worst <= res.tolerance;
  return res;
}

inline const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> ops{"conv2d_k3", "conv2d_k1",     "tconv2x2",         "relu",
                                            "maxpool2x2", "adaptive_avg_pool", "upsample_nearest", "concat_channels",
                                            "softmax_channels", "gdl_loss", "end_to_end"};
  return ops;
}

inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& o) {
  using namespace gradcheck_detail;
  std::vector<GradcheckResult> out;
  const auto& ops = gradcheck_ops();
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const std::string& name = ops[k];
    if (!o.op_filter.empty() && name.rfind(o.op_filter, 0) != 0) continue;
    RngStream rng(o.seed, stream_id({0x67c4, k}));
    if (name == "conv2d_k3")
      out.push_back(run_op(name, [](RngStream& r) { return conv_case(r, 3); }, rng, o));
    else if (name == "conv2d_k1")
      out.push_back(run_op(name, [](RngStream& r) { return conv_case(r, 1); }, rng, o));
    else if (name == "tconv2x2")
      out.push_back(run_op(name, tconv_case, rng, o));
    else if (name == "relu")
      out.push_back(run_op(name, relu_case, rng, o));
    else if (name == "maxpool2x2")
      out.push_back(run_op(name, maxpool_case, rng, o));
    else if (name == "adaptive_avg_pool")
      out.push_back(run_op(name, avgpool_case, rng, o));
    else if (name == "upsample_nearest")
      out.push_back(run_op(name, upsample_case, rng, o));
    else if (name == "concat_channels")
      out.push_back(run_op(name, concat_case, rng, o));
    else if (name == "softmax_channels")
      out.push_back(run_op(name, softmax_case, rng, o));
    else if (name == "gdl_loss")
      out.push_back(run_loss(rng, o));
    else if (name == "end_to_end")
      out.push_back(end_to_end_gradcheck(o, rng));
  }
  if (out.empty()) throw ValidationError("no gradcheck op matches '" + o.op_filter + "'");
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_GRADCHECK_HPP
