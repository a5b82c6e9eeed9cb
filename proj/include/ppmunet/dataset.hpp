// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_DATASET_HPP
#define PPMUNET_DATASET_HPP

// On-disk layout:
//   manifest.json                          key-sorted JSON
//   scans/<patient>/<scan>/bscan_<i>.nt4   f32 image, 1x1xhxw
//   scans/<patient>/<scan>/mask_<i>.nt4    u8 labels, hxw
//   scans/<patient>/<scan>/surf_<i>.nt4    f32 2xw, OBRPE row then BM row

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppmunet/bytes.hpp"
#include "ppmunet/nt4.hpp"
#include "ppmunet/synth.hpp"

namespace ppmunet {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "' (expected train, val or test)");
}

struct DatasetPlan {
  std::size_t patients = 10;
  std::size_t scans_per_patient = 2;
  std::size_t bscans_per_scan = 20;
  std::array<double, 3> split{0.7, 0.1, 0.2};  // train, val, test fractions
};

/// Patients per split by largest remainder; every split with a positive
/// fraction receives at least one patient.
inline std::array<std::size_t, 3> split_counts(std::size_t patients, const std::array<double, 3>& fractions) {
  double sum = 0.0;
  std::size_t nonempty = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("split fractions must be non-negative");
    sum += f;
    nonempty += f > 0.0 ? 1 : 0;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("split fractions must sum to 1");
  if (patients < nonempty)
    throw ValidationError("impossible split: " + std::to_string(patients) + " patients for " +
                          std::to_string(nonempty) + " nonempty splits");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(patients);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < patients) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i)
    if (fractions[i] > 0.0 && counts[i] == 0) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < 3; ++j)
        if (counts[j] > counts[donor]) donor = j;
      --counts[donor];
      ++counts[i];
    }
  return counts;
}

inline std::string patient_id(std::size_t p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%03zu", p);
  return buf;
}

inline std::filesystem::path scan_dir(const std::string& patient, std::size_t scan) {
  return std::filesystem::path("scans") / patient / std::to_string(scan);
}

/// Per-patient anatomy, drawn once so B-scans of one patient correlate.
struct PatientStyle {
  double baseline_shift = 0.0;  // fraction of height
  double undulation_scale = 1.0;
  double drusen_rate_scale = 1.0;
};

inline PatientStyle draw_patient_style(RngStream& rng) {
  PatientStyle s;
  s.baseline_shift = rng.uniform(-0.04, 0.04);
  s.undulation_scale = rng.uniform(0.5, 1.5);
  s.drusen_rate_scale = rng.uniform(0.5, 1.5);
  return s;
}

inline SynthSpec apply_style(SynthSpec spec, const PatientStyle& s) {
  spec.bm_baseline += s.baseline_shift;
  spec.undulation_amplitude *= s.undulation_scale;
  spec.drusen_count_mean *= s.drusen_rate_scale;
  return spec;
}

inline Nt4Array surfaces_to_nt4(const SurfacePair& s) {
  Nt4Array a;
  a.dtype = Nt4Dtype::f32;
  a.dims = {2, static_cast<std::uint32_t>(s.width())};
  a.f32.reserve(2 * s.width());
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (const auto& v : s.obrpe) a.f32.push_back(v ? static_cast<float>(*v) : nan);
  for (const auto& v : s.bm) a.f32.push_back(v ? static_cast<float>(*v) : nan);
  return a;
}

inline SurfacePair surfaces_from_nt4(const Nt4Array& a, std::size_t height) {
  if (a.dtype != Nt4Dtype::f32 || a.dims.size() != 2 || a.dims[0] != 2)
    throw FormatError(FormatErrc::shape_mismatch, 6, "surface arrays must be 2 x width f32");
  SurfacePair s;
  s.height = height;
  const std::size_t w = a.dims[1];
  for (std::size_t x = 0; x < w; ++x) {
    const float o = a.f32[x], b = a.f32[w + x];
    s.obrpe.push_back(std::isnan(o) ? std::nullopt : std::optional<double>(o));
    s.bm.push_back(std::isnan(b) ? std::nullopt : std::optional<double>(b));
  }
  return s;
}

/// Writes a full dataset and returns the manifest bytes.
inline std::string generate_dataset(const SynthSpec& spec, const DatasetPlan& plan, std::uint64_t seed,
                                    const std::filesystem::path& dir) {
  spec.validate();
  if (plan.patients < 1) throw ValidationError("patients must be >= 1");
  if (plan.scans_per_patient < 1 || plan.bscans_per_scan < 1)
    throw ValidationError("scans and bscans per scan must be >= 1");
  const auto counts = split_counts(plan.patients, plan.split);

  // Patient order shuffled once, then cut into train/val/test.
  std::vector<std::size_t> order(plan.patients);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream split_rng(seed, stream_id({0x5b1d, 0}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  std::vector<Split> assignment(plan.patients);
  for (std::size_t i = 0; i < order.size(); ++i)
    assignment[order[i]] = i < counts[0] ? Split::train : (i < counts[0] + counts[1] ? Split::val : Split::test);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json files = nlohmann::json::array();
  nlohmann::json splits = nlohmann::json::object();
  for (std::size_t p = 0; p < plan.patients; ++p) {
    const std::string pid = patient_id(p);
    splits[pid] = to_string(assignment[p]);
    RngStream style_rng(seed, stream_id({0x5171e, p}));
    const SynthSpec patient_spec = apply_style(spec, draw_patient_style(style_rng));
    for (std::size_t s = 0; s < plan.scans_per_patient; ++s)
      for (std::size_t i = 0; i < plan.bscans_per_scan; ++i) {
        RngStream rng(seed, stream_id({0xb5c4, p, s, i}));
        ScanRecord rec = generate_bscan(patient_spec, rng);
        const auto rel = scan_dir(pid, s);
        const std::string idx = std::to_string(i);
        write_nt4(dir / rel / ("bscan_" + idx + ".nt4"), to_nt4(rec.image));
        write_nt4(dir / rel / ("mask_" + idx + ".nt4"), to_nt4(rec.mask, true));
        write_nt4(dir / rel / ("surf_" + idx + ".nt4"), surfaces_to_nt4(rec.truth));
        files.push_back({{"patient", pid},
                         {"scan", s},
                         {"index", i},
                         {"split", to_string(assignment[p])},
                         {"bscan", (rel / ("bscan_" + idx + ".nt4")).generic_string()},
                         {"mask", (rel / ("mask_" + idx + ".nt4")).generic_string()},
                         {"surf", (rel / ("surf_" + idx + ".nt4")).generic_string()}});
      }
  }
  nlohmann::json manifest;
  manifest["format"] = "ppmunet-dataset-1";
  manifest["seed"] = seed;
  manifest["spec"] = spec.to_json();
  manifest["plan"] = {{"patients", plan.patients},
                      {"scans_per_patient", plan.scans_per_patient},
                      {"bscans_per_scan", plan.bscans_per_scan},
                      {"split", plan.split}};
  manifest["splits"] = splits;
  manifest["files"] = files;
  const std::string text = manifest.dump(1) + "\n";
  write_file(dir / "manifest.json", text);
  return text;
}

struct Dataset {
  std::filesystem::path root;
  nlohmann::json manifest;
  std::size_t height = 0;
  std::size_t width = 0;
};

inline Dataset open_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw ValidationError("no dataset manifest at " + path.string());
  const auto bytes = read_file(path);
  Dataset d;
  d.root = dir;
  try {
    d.manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    d.height = d.manifest.at("spec").at("height").get<std::size_t>();
    d.width = d.manifest.at("spec").at("width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  return d;
}

/// All records of one split, in manifest order.
inline std::vector<ScanRecord> load_split(const Dataset& d, Split split) {
  std::vector<ScanRecord> out;
  const std::string want = to_string(split);
  for (const auto& f : d.manifest.at("files")) {
    if (f.at("split").get<std::string>() != want) continue;
    ScanRecord r;
    r.patient = f.at("patient").get<std::string>();
    r.scan = f.at("scan").get<std::size_t>();
    r.index = f.at("index").get<std::size_t>();
    r.image = tensor_from_nt4(read_nt4(d.root / f.at("bscan").get<std::string>()));
    r.mask = labels_from_nt4(read_nt4(d.root / f.at("mask").get<std::string>()));
    r.truth = surfaces_from_nt4(read_nt4(d.root / f.at("surf").get<std::string>()), d.height);
    if (r.image.h() != d.height || r.image.w() != d.width || r.mask.h() != d.height || r.mask.w() != d.width)
      throw ValidationError("record " + f.at("bscan").get<std::string>() + " does not match manifest size");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_DATASET_HPP
