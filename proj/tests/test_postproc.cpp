// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "ppmunet/metrics.hpp"
#include "ppmunet/rng.hpp"
#include "ppmunet/synth.hpp"
#include "support/column_oracle.hpp"

namespace ppmunet {
namespace {

constexpr auto kDr = static_cast<std::uint8_t>(Class::drusen);
constexpr auto kRpe = static_cast<std::uint8_t>(Class::obrpe);
constexpr auto kBm = static_cast<std::uint8_t>(Class::bm);

LabelGrid grid(std::size_t h, std::size_t w) { return LabelGrid(1, h, w); }

using testing::brute_extract;

TEST(Extract, MatchesBruteForceOnRandomGrids) {
  RngStream r(21, 0);
  for (int t = 0; t < 100; ++t) {
    const LabelGrid g = testing::random_layer_grid(r);
    ASSERT_EQ(extract_surfaces(g).surfaces, brute_extract(g)) << "trial " << t;
  }
}

TEST(Extract, FirstAndLastRule) {
  LabelGrid g = grid(20, 1);
  for (std::size_t y : {10, 11, 12}) g(0, y, 0) = kRpe;
  for (std::size_t y : {13, 14}) g(0, y, 0) = kBm;
  const auto s = extract_surfaces(g).surfaces;
  EXPECT_EQ(*s.obrpe[0], 12.0);
  EXPECT_EQ(*s.bm[0], 13.0);
}

TEST(Extract, InterpolatesInteriorGap) {
  LabelGrid g = grid(30, 3);
  g(0, 20, 0) = kBm;
  g(0, 22, 2) = kBm;
  g(0, 5, 0) = g(0, 5, 1) = g(0, 5, 2) = kRpe;
  const auto r = extract_surfaces(g);
  EXPECT_EQ(*r.surfaces.bm[1], 21.0);
  EXPECT_EQ(r.filled_bm, 1u);
  EXPECT_EQ(r.filled_obrpe, 0u);
}

TEST(Extract, ExtendsAtBordersAndFlagsAbsence) {
  LabelGrid g = grid(10, 5);
  g(0, 6, 2) = kBm;
  const auto r = extract_surfaces(g);
  for (const auto& v : r.surfaces.bm) EXPECT_EQ(*v, 6.0);
  for (const auto& v : r.surfaces.obrpe) EXPECT_FALSE(v.has_value());
  EXPECT_TRUE(r.obrpe_absent);
  EXPECT_FALSE(r.bm_absent);
}

TEST(Extract, InversionCollapsesToMean) {
  LabelGrid g = grid(10, 1);
  g(0, 7, 0) = kRpe;
  g(0, 4, 0) = kBm;
  const auto r = extract_surfaces(g);
  EXPECT_EQ(*r.surfaces.obrpe[0], 5.5);
  EXPECT_EQ(*r.surfaces.bm[0], 5.5);
  EXPECT_EQ(r.swapped, 1u);
}

TEST(Extract, GroundTruthMaskReproducesGeneratorSurfaces) {
  const auto spec = SynthSpec::scaled(64, 64);
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream rng(s, 3);
    const auto rec = generate_bscan(spec, rng);
    const auto r = extract_surfaces(rec.mask);
    EXPECT_EQ(r.surfaces, rec.truth);
    EXPECT_EQ(surface_mae(r.surfaces, rec.truth), (std::pair<double, double>{0.0, 0.0}));
    EXPECT_EQ(r.filled_obrpe + r.filled_bm + r.swapped, 0u);
    // Drusen from the ground truth survive the topology filter unchanged.
    LabelGrid want = grid(64, 64);
    for (std::size_t i = 0; i < want.size(); ++i) want.data()[i] = rec.mask.data()[i] == kDr;
    EXPECT_EQ(finalize_drusen(rec.mask, r.surfaces, Variant::unetppm), want);
    EXPECT_EQ(finalize_drusen(rec.mask, r.surfaces, Variant::unet2c), want);
  }
}

// --- finalize --------------------------------------------------------------

SurfacePair flat(std::size_t h, std::size_t w, double o, double b) {
  SurfacePair s;
  s.height = h;
  s.obrpe.assign(w, o);
  s.bm.assign(w, b);
  return s;
}

TEST(Finalize, TouchingLayersGiveNothing) {
  LabelGrid g = grid(16, 4);
  for (auto& v : g.data()) v = kDr;
  for (Variant v : {Variant::unet2c, Variant::unet3c, Variant::unetppm}) {
    const auto m = finalize_drusen(g, flat(16, 4, 9, 9), v);
    for (auto x : m.data()) EXPECT_EQ(x, 0);
  }
  const auto adjacent = finalize_drusen(g, flat(16, 4, 9, 10), Variant::unet2c);
  for (auto x : adjacent.data()) EXPECT_EQ(x, 0);
}

TEST(Finalize, BaselineTakesStrictInterior) {
  const auto m = finalize_drusen(grid(20, 1), flat(20, 1, 10, 14), Variant::unet2c);
  for (std::size_t y = 0; y < 20; ++y) EXPECT_EQ(m(0, y, 0), (y >= 11 && y <= 13) ? 1 : 0) << y;
}

TEST(Finalize, FilterIsClassAndBetweenness) {
  RngStream r(4, 4);
  for (int t = 0; t < 20; ++t) {
    LabelGrid g = grid(12, 9);
    for (auto& v : g.data()) v = static_cast<std::uint8_t>(r.below(4));
    SurfacePair s;
    s.height = 12;
    for (std::size_t x = 0; x < 9; ++x) {
      const double a = static_cast<double>(r.below(12)), b = static_cast<double>(r.below(12));
      s.obrpe.push_back(x == 3 ? std::nullopt : std::optional<double>(std::min(a, b) + 0.5 * (t % 2)));
      s.bm.push_back(std::max(a, b));
    }
    const auto on = finalize_drusen(g, s, Variant::unetppm, true);
    const auto off = finalize_drusen(g, s, Variant::unet3c, false);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        const double yf = static_cast<double>(y);
        const bool between = s.obrpe[x] && yf > *s.obrpe[x] && yf < *s.bm[x];
        const bool cls = g(0, y, x) == kDr;
        ASSERT_EQ(on(0, y, x), cls && between);
        ASSERT_EQ(off(0, y, x), cls);
      }
  }
  EXPECT_THROW(finalize_drusen(grid(4, 4), flat(4, 3, 1, 2), Variant::unet3c), ValidationError);
}

TEST(ClassMaps, BaselineFoldsDrusen) {
  LabelGrid g = grid(1, 4);
  for (std::uint8_t i = 0; i < 4; ++i) g.data()[i] = i;
  const auto m = to_model_classes(g, Variant::unet2c);
  EXPECT_EQ((std::vector<std::uint8_t>(m.data().begin(), m.data().end())), (std::vector<std::uint8_t>{0, 0, 1, 2}));
  const auto back = to_four_class(m, Variant::unet2c);
  EXPECT_EQ((std::vector<std::uint8_t>(back.data().begin(), back.data().end())),
            (std::vector<std::uint8_t>{0, 0, 2, 3}));
  EXPECT_EQ(to_model_classes(g, Variant::unetppm), g);
}

// --- metrics ---------------------------------------------------------------

LabelGrid mask_with(std::size_t n, std::initializer_list<std::size_t> on) {
  LabelGrid g = grid(1, n);
  for (auto i : on) g.data()[i] = 1;
  return g;
}

TEST(Dice, Cases) {
  EXPECT_EQ(dice(mask_with(8, {1, 2}), mask_with(8, {1, 2})), 1.0);
  EXPECT_EQ(dice(mask_with(8, {1, 2}), mask_with(8, {3})), 0.0);
  EXPECT_EQ(dice(mask_with(8, {}), mask_with(8, {})), 1.0);
  EXPECT_DOUBLE_EQ(dice(mask_with(8, {0, 1, 2, 3}), mask_with(8, {1, 2, 3, 4, 5, 6})), 0.6);
  EXPECT_THROW(dice(grid(2, 2), grid(2, 3)), ValidationError);
}

TEST(Dice, SymmetricAndBounded) {
  RngStream r(5, 5);
  for (int t = 0; t < 50; ++t) {
    LabelGrid a = grid(5, 5), b = grid(5, 5);
    for (auto& v : a.data()) v = r.below(3) == 0;
    for (auto& v : b.data()) v = r.below(2) == 0;
    const double d = dice(a, b);
    EXPECT_EQ(d, dice(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(SurfaceMae, Cases) {
  const auto truth = flat(40, 4, 10, 20);
  EXPECT_EQ(surface_mae(truth, truth), (std::pair<double, double>{0, 0}));
  EXPECT_EQ(surface_mae(flat(40, 4, 11, 21), truth), (std::pair<double, double>{1, 1}));
  SurfacePair p = truth;
  const double off[4] = {0, 1, 2, 1};
  for (std::size_t x = 0; x < 4; ++x) *p.obrpe[x] += off[x], *p.bm[x] -= off[x];
  EXPECT_EQ(surface_mae(p, truth), (std::pair<double, double>{1, 1}));
  p.obrpe.assign(4, std::nullopt);
  const auto e = surface_error(p, truth);
  EXPECT_EQ(e.obrpe_mae(), 20.0);
  EXPECT_EQ(e.degenerate(), 4u);
  EXPECT_THROW(surface_mae(flat(40, 3, 1, 2), truth), ValidationError);
}

BscanMetrics item(const std::string& patient, std::size_t index, DiceCounts d, double mae = 0) {
  BscanMetrics m;
  m.patient = patient;
  m.index = index;
  m.drusen = d;
  m.surfaces.columns = 4;
  m.surfaces.obrpe_abs_sum = m.surfaces.bm_abs_sum = 4 * mae;
  return m;
}

TEST(Aggregate, PoolsCountsWithinPatient) {
  const auto r = aggregate_patients({item("p000", 0, {3, 4, 6}), item("p000", 1, {0, 0, 0})});
  ASSERT_EQ(r.patients.size(), 1u);
  EXPECT_DOUBLE_EQ(r.patients[0].dice_drusen, 0.6);
  EXPECT_DOUBLE_EQ(r.mean_dice, 0.6);
  EXPECT_EQ(r.patients[0].bscans, 2u);
}

TEST(Aggregate, PatientsWeighEqually) {
  // 0.4 from one scan, 0.8 pooled over three.
  const auto r = aggregate_patients({item("p001", 0, {2, 5, 5}, 1.0), item("p002", 0, {4, 5, 5}, 3.0),
                                     item("p002", 1, {4, 5, 5}, 3.0), item("p002", 2, {4, 5, 5}, 3.0)});
  EXPECT_DOUBLE_EQ(r.patients[0].dice_drusen, 0.4);
  EXPECT_DOUBLE_EQ(r.patients[1].dice_drusen, 0.8);
  EXPECT_DOUBLE_EQ(r.mean_dice, 0.6);
  EXPECT_DOUBLE_EQ(r.mean_mae_obrpe, 2.0);
}

TEST(Aggregate, OrderDoesNotMatter) {
  std::vector<BscanMetrics> items;
  RngStream r(6, 6);
  for (std::size_t i = 0; i < 12; ++i)
    items.push_back(item("p00" + std::to_string(i % 3), i, {r.below(3), 3 + r.below(3), 3 + r.below(3)}, r.uniform()));
  const auto a = metrics_csv(aggregate_patients(items));
  std::reverse(items.begin(), items.end());
  std::swap(items[1], items[7]);
  EXPECT_EQ(metrics_csv(aggregate_patients(items)), a);
  EXPECT_THROW(aggregate_patients({}), ValidationError);
}

TEST(Aggregate, IdenticalPatientsGiveTheirValue) {
  const auto r = aggregate_patients({item("a", 0, {1, 2, 2}, 0.5), item("b", 0, {1, 2, 2}, 0.5)});
  EXPECT_DOUBLE_EQ(r.mean_dice, 0.5);
  EXPECT_DOUBLE_EQ(r.mean_mae_bm, 0.5);
}

TEST(MetricsCsv, Format) {
  const auto r = aggregate_patients({item("p000", 0, {3, 4, 6}, 0.25)});
  EXPECT_EQ(metrics_csv(r),
            "patient,dice_drusen,mae_obrpe,mae_bm,degenerate_cols\n"
            "p000,0.600000,0.250000,0.250000,0.000000\n"
            "MEAN,0.600000,0.250000,0.250000,0.000000\n");
}

}  // namespace
}  // namespace ppmunet
