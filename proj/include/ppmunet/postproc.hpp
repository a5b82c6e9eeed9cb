// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_POSTPROC_HPP
#define PPMUNET_POSTPROC_HPP

#include <optional>
#include <vector>

#include "ppmunet/network.hpp"
#include "ppmunet/synth.hpp"

namespace ppmunet {

struct ExtractedSurfaces {
  SurfacePair surfaces;
  std::size_t filled_obrpe = 0;  // columns interpolated or extended
  std::size_t filled_bm = 0;
  std::size_t swapped = 0;       // columns where OBRPE fell below BM and was collapsed
  bool obrpe_absent = false;     // no OBRPE pixel anywhere in the slice
  bool bm_absent = false;
};

namespace detail {

// Linear interpolation between the nearest present columns, nearest value
// beyond the outermost ones. Returns the number of columns filled.
inline std::size_t fill_missing(std::vector<std::optional<double>>& row) {
  const std::size_t w = row.size();
  std::vector<std::size_t> present;
  for (std::size_t x = 0; x < w; ++x)
    if (row[x]) present.push_back(x);
  if (present.empty() || present.size() == w) return 0;
  std::size_t filled = 0, k = 0;
  for (std::size_t x = 0; x < w; ++x) {
    if (row[x]) continue;
    while (k < present.size() && present[k] < x) ++k;
    if (k == 0) {
      row[x] = *row[present.front()];
    } else if (k == present.size()) {
      row[x] = *row[present.back()];
    } else {
      const std::size_t l = present[k - 1], r = present[k];
      const double t = static_cast<double>(x - l) / static_cast<double>(r - l);
      row[x] = *row[l] + (*row[r] - *row[l]) * t;
    }
    ++filled;
  }
  return filled;
}

}  // namespace detail

/// Per column: BM = first row labelled BM, OBRPE = last row labelled OBRPE.
/// Gaps are interpolated; where OBRPE ends up below BM both collapse to their mean.
inline ExtractedSurfaces extract_surfaces(const LabelGrid& labels) {
  const std::size_t h = labels.h(), w = labels.w();
  ExtractedSurfaces r;
  r.surfaces.height = h;
  r.surfaces.obrpe.assign(w, std::nullopt);
  r.surfaces.bm.assign(w, std::nullopt);
  const auto obrpe = static_cast<std::uint8_t>(Class::obrpe), bm = static_cast<std::uint8_t>(Class::bm);
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t y = 0; y < h; ++y) {
      const auto c = labels(0, y, x);
      if (c == obrpe) r.surfaces.obrpe[x] = static_cast<double>(y);
      if (c == bm && !r.surfaces.bm[x]) r.surfaces.bm[x] = static_cast<double>(y);
    }
  r.filled_obrpe = detail::fill_missing(r.surfaces.obrpe);
  r.filled_bm = detail::fill_missing(r.surfaces.bm);
  r.obrpe_absent = !r.surfaces.obrpe.front().has_value();
  r.bm_absent = !r.surfaces.bm.front().has_value();
  for (std::size_t x = 0; x < w; ++x) {
    auto& o = r.surfaces.obrpe[x];
    auto& b = r.surfaces.bm[x];
    if (o && b && *o > *b) {
      const double mid = 0.5 * (*o + *b);
      o = mid;
      b = mid;
      ++r.swapped;
    }
  }
  return r;
}

/// Final binary drusen mask (1 = drusen). The layer-only baseline takes every
/// pixel strictly between the surfaces; the drusen-class models keep predicted
/// drusen pixels, restricted to that band when `topology_filter` is set.
inline LabelGrid finalize_drusen(const LabelGrid& labels, const SurfacePair& surfaces, Variant variant,
                                 bool topology_filter = true) {
  const std::size_t h = labels.h(), w = labels.w();
  if (surfaces.width() != w) throw ValidationError("finalize_drusen: surface width does not match labels");
  LabelGrid out(1, h, w);
  const auto drusen = static_cast<std::uint8_t>(Class::drusen);
  for (std::size_t x = 0; x < w; ++x) {
    const auto& o = surfaces.obrpe[x];
    const auto& b = surfaces.bm[x];
    for (std::size_t y = 0; y < h; ++y) {
      const double yf = static_cast<double>(y);
      const bool between = o && b && yf > *o && yf < *b;
      bool on = false;
      if (variant == Variant::unet2c)
        on = between;
      else
        on = labels(0, y, x) == drusen && (!topology_filter || between);
      out(0, y, x) = on ? 1 : 0;
    }
  }
  return out;
}

/// Maps predicted class indices of a model onto the four-class ids
/// (the layer-only baseline predicts background/OBRPE/BM).
inline LabelGrid to_four_class(const LabelGrid& pred, Variant variant) {
  if (variant != Variant::unet2c) return pred;
  LabelGrid out = pred;
  static constexpr std::uint8_t map[3] = {0, 2, 3};
  for (auto& v : out.data()) v = map[v];
  return out;
}

/// Training targets for a model: the layer-only baseline folds drusen into background.
inline LabelGrid to_model_classes(const LabelGrid& mask, Variant variant) {
  if (variant != Variant::unet2c) return mask;
  LabelGrid out = mask;
  static constexpr std::uint8_t map[4] = {0, 0, 1, 2};
  for (auto& v : out.data()) v = map[v];
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_POSTPROC_HPP
