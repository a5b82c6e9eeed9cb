// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "ppmunet/dataset.hpp"
#include "ppmunet/synth.hpp"

namespace ppmunet {
namespace {

namespace fs = std::filesystem;

constexpr auto kBg = static_cast<std::uint8_t>(Class::background);
constexpr auto kDr = static_cast<std::uint8_t>(Class::drusen);
constexpr auto kRpe = static_cast<std::uint8_t>(Class::obrpe);
constexpr auto kBm = static_cast<std::uint8_t>(Class::bm);

// Column reads top to bottom as bg+, obrpe{rpe}, drusen*, bm{band}, bg+.
void check_column(const ScanRecord& r, const SynthSpec& spec, std::size_t x) {
  const std::size_t h = spec.height;
  std::vector<std::uint8_t> col(h);
  for (std::size_t y = 0; y < h; ++y) col[y] = r.mask(0, y, x);
  std::size_t y = 0;
  auto run = [&](std::uint8_t c) {
    std::size_t n = 0;
    while (y < h && col[y] == c) ++y, ++n;
    return n;
  };
  ASSERT_GT(run(kBg), 0u) << "x=" << x;
  const std::size_t rpe_end = y;
  ASSERT_EQ(run(kRpe), spec.rpe_rows()) << "x=" << x;
  ASSERT_EQ(static_cast<double>(y - 1), *r.truth.obrpe[x]);
  ASSERT_EQ(static_cast<double>(y - 1), static_cast<double>(rpe_end + spec.rpe_rows() - 1));
  run(kDr);
  ASSERT_EQ(static_cast<double>(y), *r.truth.bm[x]);
  ASSERT_EQ(run(kBm), spec.bm_rows()) << "x=" << x;
  ASSERT_GT(run(kBg), 0u) << "x=" << x;
  ASSERT_EQ(y, h) << "x=" << x;
}

TEST(Synth, ColumnTopologyHolds) {
  for (std::size_t size : {64, 128}) {
    const auto spec = SynthSpec::scaled(size, size);
    for (std::uint64_t s = 0; s < 30; ++s) {
      RngStream rng(s, 0);
      const auto r = generate_bscan(spec, rng);
      ASSERT_EQ(r.truth.width(), size);
      for (std::size_t x = 0; x < size; ++x) check_column(r, spec, x);
    }
  }
}

TEST(Synth, HealthyScanHasNoDrusenAndAdjacentLayers) {
  auto spec = SynthSpec::scaled(64, 64);
  spec.drusen_count_mean = 0.0;
  RngStream rng(5, 0);
  const auto r = generate_bscan(spec, rng);
  for (auto v : r.mask.data()) EXPECT_NE(v, kDr);
  for (std::size_t x = 0; x < 64; ++x) EXPECT_EQ(*r.truth.obrpe[x], *r.truth.bm[x] - 1);
}

TEST(Synth, IntensitiesAreInUnitRangeAndNoiseFree) {
  auto spec = SynthSpec::scaled(32, 32);
  spec.noise_sigma = 0.0;
  RngStream rng(6, 0);
  const auto r = generate_bscan(spec, rng);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const float v = r.image(0, 0, y, x);
      switch (static_cast<Class>(r.mask(0, y, x))) {
        case Class::obrpe: EXPECT_FLOAT_EQ(v, 0.8f); break;
        case Class::drusen: EXPECT_FLOAT_EQ(v, 0.5f); break;
        case Class::bm: EXPECT_FLOAT_EQ(v, 0.65f); break;
        default:
          EXPECT_FLOAT_EQ(v, y < *r.truth.bm[x] ? 0.2f : 0.35f);
      }
    }
  spec.noise_sigma = 0.5;
  RngStream noisy(6, 0);
  const auto rn = generate_bscan(spec, noisy);
  for (float v : rn.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Synth, DrusenAreAMinority) {
  const auto spec = SynthSpec::scaled(64, 64);
  std::size_t drusen = 0, total = 0, with = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    RngStream rng(s, 7);
    const auto r = generate_bscan(spec, rng);
    std::size_t here = 0;
    for (auto v : r.mask.data()) here += v == kDr;
    drusen += here;
    with += here > 0;
    total += r.mask.size();
  }
  EXPECT_LT(static_cast<double>(drusen) / static_cast<double>(total), 0.10);
  EXPECT_GT(with, 50u);
  EXPECT_LT(with, 100u);
}

TEST(Synth, SameStreamSameScan) {
  const auto spec = SynthSpec::scaled(64, 64);
  RngStream a(3, 4), b(3, 4), c(3, 5);
  const auto ra = generate_bscan(spec, a), rb = generate_bscan(spec, b), rc = generate_bscan(spec, c);
  EXPECT_EQ(ra.image, rb.image);
  EXPECT_EQ(ra.mask, rb.mask);
  EXPECT_EQ(ra.truth, rb.truth);
  EXPECT_NE(ra.image, rc.image);
}

TEST(Synth, SpecValidation) {
  auto spec = SynthSpec::scaled(64, 64);
  EXPECT_NO_THROW(spec.validate());
  spec.height = 4;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = SynthSpec::scaled(64, 64);
  spec.drusen_amplitude_max = 60;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = SynthSpec::scaled(64, 64);
  spec.bm_baseline = 0.99;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = SynthSpec::scaled(64, 64);
  spec.noise_sigma = -1;
  EXPECT_THROW(spec.validate(), ValidationError);
}

// --- normalization ---------------------------------------------------------

TEST(Normalize, ZeroMeanUnitVariancePerSample) {
  RngStream r(1, 1);
  Tensor4<double> x(Shape4{3, 1, 9, 7});
  for (auto& v : x.data()) v = 5 + 3 * r.normal();
  x.sample(2)[0] += 100;
  const auto y = normalize_bscan(x);
  for (std::size_t b = 0; b < 3; ++b) {
    double m = 0, v = 0;
    for (double s : y.sample(b)) m += s;
    m /= 63;
    for (double s : y.sample(b)) v += (s - m) * (s - m);
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v / 63, 1, 1e-12);
  }
}

TEST(Normalize, ConstantImageBecomesZeros) {
  const Tensor4<float> x(Shape4{1, 1, 4, 4}, 0.7f);
  const auto y = normalize_bscan(x);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, AffineInvariant) {
  RngStream r(2, 2);
  Tensor4<double> x(Shape4{1, 1, 8, 8});
  for (auto& v : x.data()) v = r.uniform();
  Tensor4<double> z = x;
  for (auto& v : z.data()) v = 4 * v - 11;
  const auto a = normalize_bscan(x), b = normalize_bscan(z);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Resize, IdentityAndNearestLabels) {
  RngStream r(3, 3);
  Tensor4<float> x(Shape4{1, 1, 6, 6});
  for (auto& v : x.data()) v = static_cast<float>(r.uniform());
  EXPECT_EQ(resize_bilinear(x, 6, 6), x);
  const Tensor4<float> c(Shape4{1, 1, 5, 3}, 0.25f);
  const auto cr = resize_bilinear(c, 12, 8);
  for (float v : cr.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  LabelGrid g(1, 2, 2);
  g.data()[0] = 1, g.data()[1] = 2, g.data()[2] = 3, g.data()[3] = 0;
  const auto up = resize_nearest(g, 4, 4);
  EXPECT_EQ(up(0, 0, 0), 1);
  EXPECT_EQ(up(0, 1, 1), 1);
  EXPECT_EQ(up(0, 0, 3), 2);
  EXPECT_EQ(up(0, 3, 0), 3);
  EXPECT_EQ(up(0, 3, 3), 0);
}

// --- splits and datasets ---------------------------------------------------

TEST(Splits, LargestRemainder) {
  EXPECT_EQ(split_counts(10, {0.7, 0.1, 0.2}), (std::array<std::size_t, 3>{7, 1, 2}));
  EXPECT_EQ(split_counts(14, {10 / 14.0, 1 / 14.0, 3 / 14.0}), (std::array<std::size_t, 3>{10, 1, 3}));
  EXPECT_EQ(split_counts(1, {1.0, 0.0, 0.0}), (std::array<std::size_t, 3>{1, 0, 0}));
  for (std::size_t n = 3; n < 40; ++n) {
    const auto c = split_counts(n, {0.7, 0.1, 0.2});
    EXPECT_EQ(c[0] + c[1] + c[2], n);
    for (auto k : c) EXPECT_GE(k, 1u);
  }
  EXPECT_THROW(split_counts(10, {0.5, 0.1, 0.1}), ValidationError);
  EXPECT_THROW(split_counts(10, {1.2, -0.1, -0.1}), ValidationError);
  EXPECT_THROW(split_counts(2, {0.7, 0.1, 0.2}), ValidationError);
}

class DatasetTest : public ::testing::Test {
 protected:
  fs::path dir_ = fs::temp_directory_path() / "ppmunet_dataset_test";
  void SetUp() override { fs::remove_all(dir_); }
  void TearDown() override { fs::remove_all(dir_); }
};

TEST_F(DatasetTest, LayoutSplitsAndReload) {
  const DatasetPlan plan{10, 2, 3, {0.7, 0.1, 0.2}};
  const auto spec = SynthSpec::scaled(32, 32);
  generate_dataset(spec, plan, 4, dir_);
  const auto ds = open_dataset(dir_);
  EXPECT_EQ(ds.height, 32u);
  EXPECT_EQ(ds.width, 32u);
  EXPECT_EQ(ds.manifest.at("files").size(), 60u);
  std::map<Split, std::set<std::string>> patients;
  std::size_t total = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto recs = load_split(ds, s);
    total += recs.size();
    for (const auto& r : recs) {
      patients[s].insert(r.patient);
      check_column(r, apply_style(spec, {}), 0);  // only band thicknesses matter here
    }
  }
  EXPECT_EQ(total, 60u);
  EXPECT_EQ(patients[Split::train].size(), 7u);
  EXPECT_EQ(patients[Split::val].size(), 1u);
  EXPECT_EQ(patients[Split::test].size(), 2u);
  for (const auto& p : patients[Split::test]) {
    EXPECT_FALSE(patients[Split::train].contains(p));
    EXPECT_FALSE(patients[Split::val].contains(p));
    EXPECT_TRUE(fs::is_directory(dir_ / scan_dir(p, 1)));
  }
}

TEST_F(DatasetTest, SameSeedSameManifestAndBytes) {
  const DatasetPlan plan{4, 1, 2, {0.5, 0.25, 0.25}};
  const auto spec = SynthSpec::scaled(32, 32);
  const auto a = generate_dataset(spec, plan, 11, dir_);
  const auto first = read_file(dir_ / scan_dir("p000", 0) / "bscan_0.nt4");
  fs::remove_all(dir_);
  const auto b = generate_dataset(spec, plan, 11, dir_);
  EXPECT_EQ(a, b);
  EXPECT_EQ(read_file(dir_ / scan_dir("p000", 0) / "bscan_0.nt4"), first);
  fs::remove_all(dir_);
  EXPECT_NE(generate_dataset(spec, plan, 12, dir_), a);
}

TEST_F(DatasetTest, RejectsEmptyPlans) {
  const auto spec = SynthSpec::scaled(16, 16);
  EXPECT_THROW(generate_dataset(spec, DatasetPlan{0, 1, 1, {1, 0, 0}}, 1, dir_), ValidationError);
  EXPECT_THROW(generate_dataset(spec, DatasetPlan{1, 0, 1, {1, 0, 0}}, 1, dir_), ValidationError);
  EXPECT_THROW(open_dataset(dir_ / "nowhere"), ValidationError);
}

TEST(SurfacesNt4, RoundTripKeepsMissingColumns) {
  SurfacePair s;
  s.height = 10;
  s.obrpe = {3.0, std::nullopt, 4.5};
  s.bm = {5.0, 6.0, std::nullopt};
  EXPECT_EQ(surfaces_from_nt4(surfaces_to_nt4(s), 10), s);
}

}  // namespace
}  // namespace ppmunet
