// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_METRICS_HPP
#define PPMUNET_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "ppmunet/postproc.hpp"

namespace ppmunet {

struct DiceCounts {
  std::size_t intersection = 0;
  std::size_t a = 0;
  std::size_t b = 0;

  double value() const {
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(a + b);
  }
  DiceCounts& operator+=(const DiceCounts& o) {
    intersection += o.intersection;
    a += o.a;
    b += o.b;
    return *this;
  }
};

/// Nonzero entries count as foreground.
inline DiceCounts dice_counts(const LabelGrid& a, const LabelGrid& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw ValidationError("dice: mask dims differ");
  DiceCounts c;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool x = da[i] != 0, y = db[i] != 0;
    c.a += x;
    c.b += y;
    c.intersection += x && y;
  }
  return c;
}

/// 2|a & b| / (|a| + |b|), 1 when both are empty.
inline double dice(const LabelGrid& a, const LabelGrid& b) { return dice_counts(a, b).value(); }

struct SurfaceError {
  double obrpe_abs_sum = 0.0;
  double bm_abs_sum = 0.0;
  std::size_t columns = 0;
  std::size_t penalized_obrpe = 0;  // columns absent in the prediction, charged h/2
  std::size_t penalized_bm = 0;

  double obrpe_mae() const { return columns ? obrpe_abs_sum / static_cast<double>(columns) : 0.0; }
  double bm_mae() const { return columns ? bm_abs_sum / static_cast<double>(columns) : 0.0; }
  std::size_t degenerate() const { return std::max(penalized_obrpe, penalized_bm); }
};

inline SurfaceError surface_error(const SurfacePair& pred, const SurfacePair& truth) {
  if (pred.width() != truth.width())
    throw ValidationError("surface_mae: width " + std::to_string(pred.width()) + " vs " +
                          std::to_string(truth.width()));
  const double penalty = static_cast<double>(truth.height) / 2.0;
  SurfaceError e;
  e.columns = truth.width();
  for (std::size_t x = 0; x < truth.width(); ++x) {
    if (!truth.obrpe[x] || !truth.bm[x]) throw ValidationError("surface_mae: truth must be present in every column");
    if (pred.obrpe[x]) {
      e.obrpe_abs_sum += std::abs(*pred.obrpe[x] - *truth.obrpe[x]);
    } else {
      e.obrpe_abs_sum += penalty;
      ++e.penalized_obrpe;
    }
    if (pred.bm[x]) {
      e.bm_abs_sum += std::abs(*pred.bm[x] - *truth.bm[x]);
    } else {
      e.bm_abs_sum += penalty;
      ++e.penalized_bm;
    }
  }
  return e;
}

/// (OBRPE MAE, BM MAE) in pixels.
inline std::pair<double, double> surface_mae(const SurfacePair& pred, const SurfacePair& truth) {
  const auto e = surface_error(pred, truth);
  return {e.obrpe_mae(), e.bm_mae()};
}

struct BscanMetrics {
  std::string patient;
  std::size_t scan = 0;
  std::size_t index = 0;
  DiceCounts drusen;
  SurfaceError surfaces;
};

struct PatientMetrics {
  std::string patient;
  double dice_drusen = 0.0;
  double mae_obrpe = 0.0;
  double mae_bm = 0.0;
  std::size_t degenerate_cols = 0;
  std::size_t bscans = 0;
};

struct MetricsReport {
  std::vector<PatientMetrics> patients;  // sorted by patient id
  double mean_dice = 0.0;
  double mean_mae_obrpe = 0.0;
  double mean_mae_bm = 0.0;
  double mean_degenerate = 0.0;
};

/// Dice pools counts over each patient's B-scans; MAE averages over the
/// patient's columns. Means are then taken across patients with equal weight.
inline MetricsReport aggregate_patients(std::vector<BscanMetrics> items) {
  if (items.empty()) throw ValidationError("aggregate_patients: no B-scans");
  std::sort(items.begin(), items.end(), [](const BscanMetrics& a, const BscanMetrics& b) {
    return std::tie(a.patient, a.scan, a.index) < std::tie(b.patient, b.scan, b.index);
  });
  MetricsReport r;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    DiceCounts d;
    SurfaceError s;
    while (j < items.size() && items[j].patient == items[i].patient) {
      d += items[j].drusen;
      s.obrpe_abs_sum += items[j].surfaces.obrpe_abs_sum;
      s.bm_abs_sum += items[j].surfaces.bm_abs_sum;
      s.columns += items[j].surfaces.columns;
      s.penalized_obrpe += items[j].surfaces.degenerate();
      ++j;
    }
    r.patients.push_back({items[i].patient, d.value(), s.obrpe_mae(), s.bm_mae(), s.penalized_obrpe, j - i});
    i = j;
  }
  const double n = static_cast<double>(r.patients.size());
  for (const auto& p : r.patients) {
    r.mean_dice += p.dice_drusen;
    r.mean_mae_obrpe += p.mae_obrpe;
    r.mean_mae_bm += p.mae_bm;
    r.mean_degenerate += static_cast<double>(p.degenerate_cols);
  }
  r.mean_dice /= n;
  r.mean_mae_obrpe /= n;
  r.mean_mae_bm /= n;
  r.mean_degenerate /= n;
  return r;
}

inline std::string metrics_csv(const MetricsReport& r) {
  std::string out = "patient,dice_drusen,mae_obrpe,mae_bm,degenerate_cols\n";
  char buf[256];
  for (const auto& p : r.patients) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", p.patient.c_str(), p.dice_drusen, p.mae_obrpe,
                  p.mae_bm, static_cast<double>(p.degenerate_cols));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "MEAN,%.6f,%.6f,%.6f,%.6f\n", r.mean_dice, r.mean_mae_obrpe, r.mean_mae_bm,
                r.mean_degenerate);
  out += buf;
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_METRICS_HPP
