// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_OPS_HPP
#define PPMUNET_OPS_HPP

// Differentiable primitives. Each forward has a matching *_backward that
// ACCUMULATES (+=) into the supplied input/parameter gradients, so a value
// consumed by several ops collects all of its contributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppmunet/gemm.hpp"
#include "ppmunet/tensor.hpp"

namespace ppmunet {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

// col[(ci*9 + ky*3 + kx) * hw + y*w + x] = x[ci, y+ky-1, x+kx-1], zero outside.
template <typename T>
void im2col3x3(std::span<const T> x, std::size_t c, std::size_t h, std::size_t w, std::vector<T>& col) {
  const std::size_t hw = h * w;
  col.resize(c * 9 * hw);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* src = x.data() + ci * hw;
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col.data() + (ci * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* drow = dst + y * w;
          const std::size_t sy = y + ky;  // source row + 1
          if (sy == 0 || sy > h) {
            std::fill_n(drow, w, T{0});
            continue;
          }
          const T* srow = src + (sy - 1) * w;
          if (kx == 0) {
            drow[0] = T{0};
            std::copy_n(srow, w - 1, drow + 1);
          } else if (kx == 1) {
            std::copy_n(srow, w, drow);
          } else {
            std::copy_n(srow + 1, w - 1, drow);
            drow[w - 1] = T{0};
          }
        }
      }
  }
}

// wt[ci, co*9 + (2-ky)*3 + (2-kx)] = w[co, ci, ky, kx]: the adjoint of a 3x3
// "same" convolution is a convolution of dy with these flipped weights.
template <typename T>
std::vector<T> flipped_weights3x3(const Tensor4<T>& w) {
  const std::size_t c_out = w.n(), c_in = w.c();
  std::vector<T> wt(c_in * c_out * 9);
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx)
          wt[ci * c_out * 9 + co * 9 + (2 - ky) * 3 + (2 - kx)] = w(co, ci, ky, kx);
  return wt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride 1, "same" zero padding, kernel 1 or 3.
// weights (c_out, c_in, k, k), bias length c_out.

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weights, std::span<const T> bias) {
  const std::size_t c_out = weights.n(), c_in = weights.c(), k = weights.h();
  detail::require(k == weights.w() && (k == 1 || k == 3), "conv2d: kernel must be 1x1 or 3x3");
  detail::require(x.c() == c_in, "conv2d: input has " + std::to_string(x.c()) + " channels, weights expect " +
                                     std::to_string(c_in));
  detail::require(bias.size() == c_out, "conv2d: bias length mismatch");
  const std::size_t h = x.h(), w = x.w(), hw = h * w, kc = c_in * k * k;
  Tensor4<T> y(Shape4{x.n(), c_out, h, w});
  std::vector<T> col;
  for (std::size_t b = 0; b < x.n(); ++b) {
    auto yb = y.sample(b);
    for (std::size_t co = 0; co < c_out; ++co) std::fill_n(yb.data() + co * hw, hw, bias[co]);
    const T* src = x.sample(b).data();
    if (k == 3) {
      detail::im2col3x3(x.sample(b), c_in, h, w, col);
      src = col.data();
    }
    gemm::nn(c_out, hw, kc, weights.data().data(), kc, src, hw, yb.data(), hw);
  }
  return y;
}

/// dx may be null when the input gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weights, const Tensor4<T>& dy, Tensor4<T>* dx,
                     Tensor4<T>& dweights, std::span<T> dbias) {
  const std::size_t c_out = weights.n(), c_in = weights.c(), k = weights.h();
  const std::size_t h = x.h(), w = x.w(), hw = h * w, kc = c_in * k * k;
  std::vector<T> col, colT(hw * kc), dw(c_out * kc);
  const std::vector<T> wt = (k == 3 && dx != nullptr) ? detail::flipped_weights3x3(weights) : std::vector<T>{};
  for (std::size_t b = 0; b < x.n(); ++b) {
    auto dyb = dy.sample(b);
    for (std::size_t co = 0; co < c_out; ++co) {
      T s{0};
      for (std::size_t i = 0; i < hw; ++i) s += dyb[co * hw + i];
      dbias[co] += s;
    }
    const T* src = x.sample(b).data();
    if (k == 3) {
      detail::im2col3x3(x.sample(b), c_in, h, w, col);
      src = col.data();
    }
    gemm::transpose(kc, hw, src, colT.data());
    // Per-sample partial first, so batch accumulation order is sample order.
    std::fill(dw.begin(), dw.end(), T{0});
    gemm::nn(c_out, kc, hw, dyb.data(), hw, colT.data(), kc, dw.data(), kc);
    for (std::size_t i = 0; i < dw.size(); ++i) dweights.data()[i] += dw[i];
    if (dx == nullptr) continue;
    if (k == 1) {
      gemm::tn(c_in, hw, c_out, weights.data().data(), kc, dyb.data(), hw, dx->sample(b).data(), hw);
    } else {
      detail::im2col3x3(dyb, c_out, h, w, col);
      gemm::nn(c_in, hw, c_out * 9, wt.data(), c_out * 9, col.data(), hw, dx->sample(b).data(), hw);
    }
  }
}

// ---------------------------------------------------------------------------
// tconv2x2: stride 2, no padding. weights (c_in, c_out, 2, 2).

namespace detail {
// packed[d][co * c_in + ci] = weights[ci, co, d / 2, d % 2]
template <typename T>
std::vector<std::vector<T>> pack_tconv(const Tensor4<T>& weights) {
  const std::size_t c_in = weights.n(), c_out = weights.c();
  std::vector<std::vector<T>> packed(4, std::vector<T>(c_out * c_in));
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t ci = 0; ci < c_in; ++ci) packed[d][co * c_in + ci] = weights(ci, co, d / 2, d % 2);
  return packed;
}
}  // namespace detail

template <typename T>
Tensor4<T> tconv2x2(const Tensor4<T>& x, const Tensor4<T>& weights, std::span<const T> bias) {
  const std::size_t c_in = weights.n(), c_out = weights.c();
  detail::require(weights.h() == 2 && weights.w() == 2, "tconv2x2: kernel must be 2x2");
  detail::require(x.c() == c_in, "tconv2x2: input has " + std::to_string(x.c()) + " channels, weights expect " +
                                     std::to_string(c_in));
  detail::require(bias.size() == c_out, "tconv2x2: bias length mismatch");
  const std::size_t h = x.h(), w = x.w(), hw = h * w;
  Tensor4<T> y(Shape4{x.n(), c_out, 2 * h, 2 * w});
  const auto packed = detail::pack_tconv(weights);
  std::vector<T> z(c_out * hw);
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t d = 0; d < 4; ++d) {
      std::fill(z.begin(), z.end(), T{0});
      gemm::nn(c_out, hw, c_in, packed[d].data(), c_in, x.sample(b).data(), hw, z.data(), hw);
      const std::size_t dy = d / 2, dx = d % 2;
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx) y(b, co, 2 * yy + dy, 2 * xx + dx) = z[co * hw + yy * w + xx] + bias[co];
    }
  return y;
}

template <typename T>
void tconv2x2_backward(const Tensor4<T>& x, const Tensor4<T>& weights, const Tensor4<T>& dy, Tensor4<T>* dx,
                       Tensor4<T>& dweights, std::span<T> dbias) {
  const std::size_t c_in = weights.n(), c_out = weights.c();
  const std::size_t h = x.h(), w = x.w(), hw = h * w;
  const auto packed = detail::pack_tconv(weights);
  std::vector<T> g(c_out * hw), gT(hw * c_out), dw(c_in * c_out);
  for (std::size_t b = 0; b < x.n(); ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      T s{0};
      for (T v : dy.plane(b, co)) s += v;
      dbias[co] += s;
    }
    for (std::size_t d = 0; d < 4; ++d) {
      const std::size_t oy = d / 2, ox = d % 2;
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx) g[co * hw + yy * w + xx] = dy(b, co, 2 * yy + oy, 2 * xx + ox);
      if (dx != nullptr)
        gemm::tn(c_in, hw, c_out, packed[d].data(), c_in, g.data(), hw, dx->sample(b).data(), hw);
      gemm::transpose(c_out, hw, g.data(), gT.data());
      std::fill(dw.begin(), dw.end(), T{0});
      gemm::nn(c_in, c_out, hw, x.sample(b).data(), hw, gT.data(), c_out, dw.data(), c_out);
      for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t co = 0; co < c_out; ++co) dweights(ci, co, oy, ox) += dw[ci * c_out + co];
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y(x.shape());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return y;
}

/// Passes gradient where x > 0.
template <typename T>
void relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>& dx) {
  auto xs = x.data();
  auto g = dy.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (xs[i] > T{0}) d[i] += g[i];
}

// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResult {
  Tensor4<T> out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 stride-2 max pool; ties keep the first element in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2x2(const Tensor4<T>& x) {
  detail::require(x.h() % 2 == 0 && x.w() % 2 == 0,
                  "maxpool2x2: spatial dims must be even, got " + std::to_string(x.h()) + "x" + std::to_string(x.w()));
  const std::size_t oh = x.h() / 2, ow = x.w() / 2;
  MaxPoolResult<T> r{Tensor4<T>(Shape4{x.n(), x.c(), oh, ow}), {}};
  r.argmax.resize(r.out.size());
  auto xs = x.data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          const std::size_t base = x.index(b, c, 2 * y, 2 * xx);
          const std::size_t cand[4] = {base, base + 1, base + x.w(), base + x.w() + 1};
          std::size_t best = cand[0];
          for (std::size_t k = 1; k < 4; ++k)
            if (xs[cand[k]] > xs[best]) best = cand[k];
          r.out.data()[o] = xs[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

template <typename T>
void maxpool2x2_backward(std::span<const std::uint32_t> argmax, const Tensor4<T>& dy, Tensor4<T>& dx) {
  auto g = dy.data();
  auto d = dx.data();
  for (std::size_t o = 0; o < g.size(); ++o) d[argmax[o]] += g[o];
}

// ---------------------------------------------------------------------------
// Adaptive average pooling onto a b x b grid. Bins larger than the map are
// clamped to min(b, h, w); cell i spans [floor(i*len/b), floor((i+1)*len/b)).

inline std::size_t effective_bins(std::size_t bins, std::size_t h, std::size_t w) {
  return std::min({bins, h, w});
}

inline std::size_t bin_start(std::size_t i, std::size_t len, std::size_t bins) { return i * len / bins; }

template <typename T>
Tensor4<T> adaptive_avg_pool(const Tensor4<T>& x, std::size_t bins) {
  detail::require(bins >= 1, "adaptive_avg_pool: bins must be >= 1");
  const std::size_t h = x.h(), w = x.w(), b_eff = effective_bins(bins, h, w);
  Tensor4<T> y(Shape4{x.n(), x.c(), b_eff, b_eff});
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(b, c);
      for (std::size_t i = 0; i < b_eff; ++i) {
        const std::size_t r0 = bin_start(i, h, b_eff), r1 = bin_start(i + 1, h, b_eff);
        for (std::size_t j = 0; j < b_eff; ++j) {
          const std::size_t c0 = bin_start(j, w, b_eff), c1 = bin_start(j + 1, w, b_eff);
          T s{0};
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) s += src[r * w + q];
          y(b, c, i, j) = s / static_cast<T>((r1 - r0) * (c1 - c0));
        }
      }
    }
  return y;
}

/// The bin grid is read off dy; dx supplies the source extent.
template <typename T>
void adaptive_avg_pool_backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::size_t h = dx.h(), w = dx.w(), b_eff = dy.h();
  for (std::size_t b = 0; b < dx.n(); ++b)
    for (std::size_t c = 0; c < dx.c(); ++c) {
      auto dst = dx.plane(b, c);
      for (std::size_t i = 0; i < b_eff; ++i) {
        const std::size_t r0 = bin_start(i, h, b_eff), r1 = bin_start(i + 1, h, b_eff);
        for (std::size_t j = 0; j < b_eff; ++j) {
          const std::size_t c0 = bin_start(j, w, b_eff), c1 = bin_start(j + 1, w, b_eff);
          const T g = dy(b, c, i, j) / static_cast<T>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) dst[r * w + q] += g;
        }
      }
    }
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling: output (r, q) reads (floor(r*h/H), floor(q*w/W)).

template <typename T>
Tensor4<T> upsample_nearest(const Tensor4<T>& x, std::size_t target_h, std::size_t target_w) {
  detail::require(target_h >= x.h() && target_w >= x.w(),
                  "upsample_nearest: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                      " is smaller than source " + std::to_string(x.h()) + "x" + std::to_string(x.w()));
  const std::size_t h = x.h(), w = x.w();
  Tensor4<T> y(Shape4{x.n(), x.c(), target_h, target_w});
  std::vector<std::size_t> src_col(target_w);
  for (std::size_t q = 0; q < target_w; ++q) src_col[q] = q * w / target_w;
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(b, c);
      auto dst = y.plane(b, c);
      for (std::size_t r = 0; r < target_h; ++r) {
        const T* srow = src.data() + (r * h / target_h) * w;
        T* drow = dst.data() + r * target_w;
        for (std::size_t q = 0; q < target_w; ++q) drow[q] = srow[src_col[q]];
      }
    }
  return y;
}

template <typename T>
void upsample_nearest_backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::size_t h = dx.h(), w = dx.w(), th = dy.h(), tw = dy.w();
  for (std::size_t b = 0; b < dx.n(); ++b)
    for (std::size_t c = 0; c < dx.c(); ++c) {
      auto g = dy.plane(b, c);
      auto d = dx.plane(b, c);
      for (std::size_t r = 0; r < th; ++r) {
        T* drow = d.data() + (r * h / th) * w;
        for (std::size_t q = 0; q < tw; ++q) drow[q * w / tw] += g[r * tw + q];
      }
    }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>* const> parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const Shape4& s0 = parts.front()->shape();
  std::size_t total = 0;
  for (const auto* p : parts) {
    const Shape4& s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ValidationError("concat_channels: spatial mismatch " + to_string(s0) + " vs " + to_string(s));
    total += s.c;
  }
  Tensor4<T> y(Shape4{s0.n, total, s0.h, s0.w});
  for (std::size_t b = 0; b < s0.n; ++b) {
    T* dst = y.sample(b).data();
    for (const auto* p : parts) {
      auto src = p->sample(b);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return y;
}

template <typename T>
Tensor4<T> concat_channels(std::initializer_list<const Tensor4<T>*> parts) {
  return concat_channels<T>(std::span<const Tensor4<T>* const>(parts.begin(), parts.size()));
}

/// Slices dy back into the parts, in argument order.
template <typename T>
void concat_channels_backward(const Tensor4<T>& dy, std::span<Tensor4<T>* const> dparts) {
  for (std::size_t b = 0; b < dy.n(); ++b) {
    const T* src = dy.sample(b).data();
    for (auto* p : dparts) {
      auto dst = p->sample(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      src += dst.size();
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x) {
  Tensor4<T> y(x.shape());
  const std::size_t hw = x.shape().plane(), c = x.c();
  for (std::size_t b = 0; b < x.n(); ++b) {
    const T* src = x.sample(b).data();
    T* dst = y.sample(b).data();
    for (std::size_t i = 0; i < hw; ++i) {
      T m = src[i];
      for (std::size_t k = 1; k < c; ++k) m = std::max(m, src[k * hw + i]);
      T s{0};
      for (std::size_t k = 0; k < c; ++k) {
        const T e = std::exp(src[k * hw + i] - m);
        dst[k * hw + i] = e;
        s += e;
      }
      for (std::size_t k = 0; k < c; ++k) dst[k * hw + i] /= s;
    }
  }
  return y;
}

/// dx += p * (dy - <p, dy>) per pixel, using the forward output p.
template <typename T>
void softmax_channels_backward(const Tensor4<T>& probs, const Tensor4<T>& dy, Tensor4<T>& dx) {
  const std::size_t hw = probs.shape().plane(), c = probs.c();
  for (std::size_t b = 0; b < probs.n(); ++b) {
    const T* p = probs.sample(b).data();
    const T* g = dy.sample(b).data();
    T* d = dx.sample(b).data();
    for (std::size_t i = 0; i < hw; ++i) {
      T dot{0};
      for (std::size_t k = 0; k < c; ++k) dot += p[k * hw + i] * g[k * hw + i];
      for (std::size_t k = 0; k < c; ++k) d[k * hw + i] += p[k * hw + i] * (g[k * hw + i] - dot);
    }
  }
}

}  // namespace ppmunet

#endif  // PPMUNET_OPS_HPP
