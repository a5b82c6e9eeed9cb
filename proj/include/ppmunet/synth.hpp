// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_SYNTH_HPP
#define PPMUNET_SYNTH_HPP

// Parametric OCT B-scan generator. Per column x (rows grow downward):
//   bm(x)    = round(baseline*h + A sin(2 pi x / lambda + phase))
//   e(x)     = sum_k a_k exp(-(x - c_k)^2 / (2 s_k^2)),  K ~ Poisson(rate)
//   d(x)     = e(x) > threshold ? max(1, round(e(x))) : 0
//   obrpe(x) = bm(x) - 1 - d(x)
// RPE band rows [obrpe - rpe + 1, obrpe], drusen rows (obrpe, bm), BM band rows
// [bm, bm + band - 1]. Healthy columns have OBRPE on the row directly above BM.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppmunet/rng.hpp"
#include "ppmunet/tensor.hpp"

namespace ppmunet {

/// OBRPE and BM boundary rows per A-scan (column); absent where not found.
struct SurfacePair {
  std::size_t height = 0;
  std::vector<std::optional<double>> obrpe;
  std::vector<std::optional<double>> bm;

  std::size_t width() const noexcept { return obrpe.size(); }
  friend bool operator==(const SurfacePair&, const SurfacePair&) = default;
};

struct SynthSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  double rpe_thickness = 3.0;
  double bm_band_thickness = 2.0;
  double bm_baseline = 0.70;
  double undulation_amplitude = 2.0;
  double undulation_wavelength = 64.0;
  double drusen_count_mean = 2.0;
  double drusen_amplitude_min = 2.0;
  double drusen_amplitude_max = 12.0;
  double drusen_sigma_min = 3.0;
  double drusen_sigma_max = 10.0;
  double drusen_presence_threshold = 1.0;
  double intensity_background = 0.20;
  double intensity_rpe = 0.80;
  double intensity_drusen = 0.50;
  double intensity_bm = 0.65;
  double intensity_sub_bm = 0.35;
  double noise_sigma = 0.05;

  /// Defaults with vertical lengths scaled by height/64 and horizontal by width/64.
  static SynthSpec scaled(std::size_t width, std::size_t height) {
    SynthSpec s;
    const double sv = static_cast<double>(height) / 64.0, sh = static_cast<double>(width) / 64.0;
    s.width = width;
    s.height = height;
    s.rpe_thickness *= sv;
    s.bm_band_thickness *= sv;
    s.undulation_amplitude *= sv;
    s.drusen_amplitude_min *= sv;
    s.drusen_amplitude_max *= sv;
    s.undulation_wavelength *= sh;
    s.drusen_sigma_min *= sh;
    s.drusen_sigma_max *= sh;
    return s;
  }

  std::size_t rpe_rows() const { return static_cast<std::size_t>(std::max(1.0, std::round(rpe_thickness))); }
  std::size_t bm_rows() const { return static_cast<std::size_t>(std::max(1.0, std::round(bm_band_thickness))); }

  void validate() const {
    const double h = static_cast<double>(height);
    if (width < 1 || height < 8) throw ValidationError("synth: image must be at least 1x8");
    if (rpe_thickness < 1.0) throw ValidationError("synth: rpe_thickness must be >= 1");
    if (bm_band_thickness < 1.0) throw ValidationError("synth: bm_band_thickness must be >= 1");
    if (bm_baseline * h + undulation_amplitude + static_cast<double>(bm_rows()) >= h)
      throw ValidationError("synth: BM band leaves the frame");
    if (drusen_amplitude_max + undulation_amplitude + static_cast<double>(rpe_rows()) + 1.0 >= bm_baseline * h)
      throw ValidationError("synth: drusen amplitude pushes the RPE out of frame");
    if (drusen_amplitude_min < 0.0 || drusen_amplitude_min > drusen_amplitude_max)
      throw ValidationError("synth: bad drusen amplitude range");
    if (drusen_sigma_min <= 0.0 || drusen_sigma_min > drusen_sigma_max)
      throw ValidationError("synth: bad drusen sigma range");
    if (drusen_count_mean < 0.0 || noise_sigma < 0.0 || undulation_amplitude < 0.0 || undulation_wavelength <= 0.0)
      throw ValidationError("synth: negative rate, noise or undulation");
  }

  nlohmann::json to_json() const {
    return {{"width", width},
            {"height", height},
            {"rpe_thickness", rpe_thickness},
            {"bm_band_thickness", bm_band_thickness},
            {"bm_baseline", bm_baseline},
            {"undulation_amplitude", undulation_amplitude},
            {"undulation_wavelength", undulation_wavelength},
            {"drusen_count_mean", drusen_count_mean},
            {"drusen_amplitude_min", drusen_amplitude_min},
            {"drusen_amplitude_max", drusen_amplitude_max},
            {"drusen_sigma_min", drusen_sigma_min},
            {"drusen_sigma_max", drusen_sigma_max},
            {"drusen_presence_threshold", drusen_presence_threshold},
            {"intensity_background", intensity_background},
            {"intensity_rpe", intensity_rpe},
            {"intensity_drusen", intensity_drusen},
            {"intensity_bm", intensity_bm},
            {"intensity_sub_bm", intensity_sub_bm},
            {"noise_sigma", noise_sigma}};
  }
};

struct ScanRecord {
  std::string patient;
  std::size_t scan = 0;
  std::size_t index = 0;
  Tensor4<float> image;  // 1 x 1 x h x w, raw intensities in [0, 1]
  LabelGrid mask;        // 1 x h x w
  SurfacePair truth;
};

/// Draws one B-scan. Consumes the stream in a fixed order.
inline ScanRecord generate_bscan(const SynthSpec& spec, RngStream& rng) {
  spec.validate();
  const std::size_t w = spec.width, h = spec.height;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const unsigned k = rng.poisson(spec.drusen_count_mean);
  struct Bump {
    double amp, center, sigma;
  };
  std::vector<Bump> bumps(k);
  for (auto& b : bumps) {
    b.amp = rng.uniform(spec.drusen_amplitude_min, spec.drusen_amplitude_max);
    b.center = rng.uniform(0.0, static_cast<double>(w));
    b.sigma = rng.uniform(spec.drusen_sigma_min, spec.drusen_sigma_max);
  }

  ScanRecord rec;
  rec.image = Tensor4<float>(Shape4{1, 1, h, w});
  rec.mask = LabelGrid(1, h, w);
  rec.truth.height = h;
  rec.truth.obrpe.resize(w);
  rec.truth.bm.resize(w);
  const auto rpe = static_cast<long>(spec.rpe_rows()), band = static_cast<long>(spec.bm_rows());
  for (std::size_t x = 0; x < w; ++x) {
    const double xf = static_cast<double>(x);
    const long bm = std::lround(spec.bm_baseline * static_cast<double>(h) +
                                spec.undulation_amplitude *
                                    std::sin(2.0 * std::numbers::pi * xf / spec.undulation_wavelength + phase));
    double e = 0.0;
    for (const auto& b : bumps) e += b.amp * std::exp(-(xf - b.center) * (xf - b.center) / (2.0 * b.sigma * b.sigma));
    e = std::min(e, spec.drusen_amplitude_max);
    const long d = e > spec.drusen_presence_threshold ? std::max(1L, std::lround(e)) : 0L;
    const long obrpe = bm - 1 - d;
    rec.truth.obrpe[x] = static_cast<double>(obrpe);
    rec.truth.bm[x] = static_cast<double>(bm);
    for (long y = 0; y < static_cast<long>(h); ++y) {
      Class c = Class::background;
      double level = y < bm ? spec.intensity_background : spec.intensity_sub_bm;
      if (y > obrpe - rpe && y <= obrpe) {
        c = Class::obrpe;
        level = spec.intensity_rpe;
      } else if (y > obrpe && y < bm) {
        c = Class::drusen;
        level = spec.intensity_drusen;
      } else if (y >= bm && y < bm + band) {
        c = Class::bm;
        level = spec.intensity_bm;
      }
      rec.mask(0, static_cast<std::size_t>(y), x) = static_cast<std::uint8_t>(c);
      rec.image(0, 0, static_cast<std::size_t>(y), x) = static_cast<float>(level);
    }
  }
  // Noise drawn row-major after geometry so the layout above is stream-stable.
  for (float& v : rec.image.data())
    v = static_cast<float>(std::clamp(static_cast<double>(v) + spec.noise_sigma * rng.normal(), 0.0, 1.0));
  return rec;
}

/// Zero mean, unit variance per sample; near-constant samples become all zeros.
template <typename T>
Tensor4<T> normalize_bscan(const Tensor4<T>& image) {
  Tensor4<T> out(image.shape());
  for (std::size_t b = 0; b < image.n(); ++b) {
    auto src = image.sample(b);
    auto dst = out.sample(b);
    double mean = 0.0;
    for (T v : src) mean += static_cast<double>(v);
    mean /= static_cast<double>(src.size());
    double var = 0.0;
    for (T v : src) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
    var /= static_cast<double>(src.size());
    if (var < 1e-12) continue;
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * inv);
  }
  return out;
}

/// Bilinear resize (half-pixel centres, edge clamped), for external images.
inline Tensor4<float> resize_bilinear(const Tensor4<float>& x, std::size_t th, std::size_t tw) {
  Tensor4<float> y(Shape4{x.n(), x.c(), th, tw});
  const double sy = static_cast<double>(x.h()) / static_cast<double>(th);
  const double sx = static_cast<double>(x.w()) / static_cast<double>(tw);
  auto coord = [](double pos, std::size_t len, std::size_t& i0, std::size_t& i1, double& f) {
    pos = std::clamp(pos, 0.0, static_cast<double>(len - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, len - 1);
    f = pos - static_cast<double>(i0);
  };
  for (std::size_t b = 0; b < x.n(); ++b)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t r = 0; r < th; ++r) {
        std::size_t y0, y1;
        double fy;
        coord((static_cast<double>(r) + 0.5) * sy - 0.5, x.h(), y0, y1, fy);
        for (std::size_t q = 0; q < tw; ++q) {
          std::size_t x0, x1;
          double fx;
          coord((static_cast<double>(q) + 0.5) * sx - 0.5, x.w(), x0, x1, fx);
          const double top = x(b, c, y0, x0) * (1 - fx) + x(b, c, y0, x1) * fx;
          const double bot = x(b, c, y1, x0) * (1 - fx) + x(b, c, y1, x1) * fx;
          y(b, c, r, q) = static_cast<float>(top * (1 - fy) + bot * fy);
        }
      }
  return y;
}

/// Nearest-neighbour resize for label maps.
inline LabelGrid resize_nearest(const LabelGrid& g, std::size_t th, std::size_t tw) {
  LabelGrid out(g.n(), th, tw);
  for (std::size_t b = 0; b < g.n(); ++b)
    for (std::size_t r = 0; r < th; ++r)
      for (std::size_t q = 0; q < tw; ++q) out(b, r, q) = g(b, r * g.h() / th, q * g.w() / tw);
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_SYNTH_HPP
