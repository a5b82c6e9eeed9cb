// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_TRAINING_HPP
#define PPMUNET_TRAINING_HPP

// Training, evaluation and prediction drivers behind the CLI.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppmunet/checkpoint.hpp"
#include "ppmunet/dataset.hpp"
#include "ppmunet/denormals.hpp"
#include "ppmunet/loss.hpp"
#include "ppmunet/metrics.hpp"
#include "ppmunet/postproc.hpp"

namespace ppmunet {

struct RunConfig {
  ModelConfig model;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 1e-5;
  std::vector<double> class_weights;  // empty: defaults for the variant
  std::uint64_t seed = 1;
  bool deterministic = false;
  std::string data;
  std::string out = "model.pun";
  std::string log = "train_log.csv";

  ClassWeights weights() const {
    if (class_weights.empty()) return ClassWeights::defaults(model.num_classes());
    return ClassWeights{class_weights};
  }

  void validate() const {
    model.validate();
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    weights().validate(model.num_classes());
  }

  nlohmann::json to_json() const {
    nlohmann::json j = model.to_json();
    j.erase("num_classes");
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["class_weights"] = class_weights;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["data"] = data;
    j["out"] = out;
    j["log"] = log;
    return j;
  }

  /// Overlays the keys present in `j`; absent keys keep their current value.
  void merge_json(const nlohmann::json& j) {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("variant")) model.variant = parse_variant(j.at("variant").get<std::string>());
    take("depth", model.depth);
    take("base_channels", model.base_channels);
    take("bins", model.bins);
    take("input_h", model.input_h);
    take("input_w", model.input_w);
    take("epochs", epochs);
    take("batch_size", batch_size);
    take("learning_rate", learning_rate);
    take("class_weights", class_weights);
    take("seed", seed);
    take("deterministic", deterministic);
    take("data", data);
    take("out", out);
    take("log", log);
  }
};

/// Named presets. "desk" is sized for CPU runs; "full" is the full-resolution recipe.
inline void apply_profile(RunConfig& rc, const std::string& profile) {
  if (profile == "desk") {
    rc.model.input_h = rc.model.input_w = 64;
    rc.model.depth = 4;
    rc.model.base_channels = 8;
    rc.epochs = 30;
    rc.learning_rate = 3e-4;
    rc.batch_size = 8;
  } else if (profile == "full" || profile == "paper") {
    rc.model.input_h = rc.model.input_w = 256;
    rc.model.depth = 5;
    rc.model.base_channels = 32;
    rc.epochs = 50;
    rc.learning_rate = 1e-5;
    rc.batch_size = 16;
  } else {
    throw ValidationError("unknown profile '" + profile + "' (expected desk or full)");
  }
}

/// Network-ready sample: normalized image and targets in model class ids.
struct Sample {
  std::vector<float> image;
  std::vector<std::uint8_t> target;
};

inline std::vector<Sample> prepare_samples(const std::vector<ScanRecord>& records, const ModelConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Tensor4<float> img = r.image;
    LabelGrid mask = r.mask;
    if (img.h() != cfg.input_h || img.w() != cfg.input_w) {
      img = resize_bilinear(img, cfg.input_h, cfg.input_w);
      mask = resize_nearest(mask, cfg.input_h, cfg.input_w);
    }
    img = normalize_bscan(img);
    mask = to_model_classes(mask, cfg.variant);
    out.push_back(Sample{img.vector(), std::vector<std::uint8_t>(mask.data().begin(), mask.data().end())});
  }
  return out;
}

inline std::pair<Tensor4<float>, LabelGrid> make_batch(const std::vector<Sample>& samples,
                                                       std::span<const std::size_t> idx, const ModelConfig& cfg) {
  const std::size_t hw = cfg.input_h * cfg.input_w;
  Tensor4<float> x(Shape4{idx.size(), 1, cfg.input_h, cfg.input_w});
  LabelGrid y(idx.size(), cfg.input_h, cfg.input_w);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy(samples[idx[b]].image.begin(), samples[idx[b]].image.end(), x.sample(b).begin());
    std::copy(samples[idx[b]].target.begin(), samples[idx[b]].target.end(), y.data().begin() + b * hw);
  }
  return {std::move(x), std::move(y)};
}

/// Mean batch loss without gradient updates.
inline double evaluate_loss(const Model<float>& model, const std::vector<Sample>& samples, std::size_t batch_size,
                            const ClassWeights& w) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < samples.size(); s += batch_size) {
    idx.clear();
    for (std::size_t i = s; i < std::min(samples.size(), s + batch_size); ++i) idx.push_back(i);
    auto [x, y] = make_batch(samples, idx, model.config());
    total += gdl_loss(forward(model, x).probs, y, w).loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

struct EpochStats {
  std::size_t epoch;
  double loss_train;
  double loss_val;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

inline std::filesystem::path best_checkpoint_path(const std::filesystem::path& out) {
  auto p = out;
  p.replace_extension();
  p += ".best" + out.extension().string();
  return p;
}

inline std::string format_epoch(const EpochStats& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", e.epoch, e.loss_train, e.loss_val);
  return buf;
}

inline TrainResult train(const RunConfig& rc, std::ostream* progress = nullptr) {
  rc.validate();
  const FlushDenormals ftz;
  const Dataset ds = open_dataset(rc.data);
  const auto train_set = prepare_samples(load_split(ds, Split::train), rc.model);
  const auto val_set = prepare_samples(load_split(ds, Split::val), rc.model);
  if (train_set.empty()) throw ValidationError("dataset has no training B-scans");
  const ClassWeights weights = rc.weights();

  RngStream init_rng(rc.seed, stream_id({0x1417}));
  Model<float> model = build_model<float>(rc.model, init_rng);
  AdamState<float> adam = AdamState<float>::init(model.params(), AdamHyper{rc.learning_rate});

  TrainResult result;
  result.final_checkpoint = rc.out;
  result.best_checkpoint = best_checkpoint_path(rc.out);
  write_file(rc.log, std::string_view("epoch,loss_train,loss_val\n"));
  std::ofstream log(rc.log, std::ios::app);
  if (!log) throw RuntimeFailure("cannot open log " + rc.log);

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= rc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream shuffle(rc.seed, stream_id({0x5f1e, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += rc.batch_size) {
      const auto idx = std::span<const std::size_t>(order).subspan(s, std::min(rc.batch_size, order.size() - s));
      auto [x, y] = make_batch(train_set, idx, rc.model);
      const auto fwd = forward(model, x);
      const auto lr = gdl_loss(fwd.probs, y, weights);
      if (!std::isfinite(lr.loss))
        throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      const auto grads = backward(model, fwd, lr.grad);
      adam_step(model, grads, adam);
      sum += lr.loss;
      ++batches;
    }
    EpochStats st{epoch, sum / static_cast<double>(batches), evaluate_loss(model, val_set, rc.batch_size, weights)};
    result.epochs.push_back(st);
    log << format_epoch(st) << std::flush;
    if (progress) *progress << "epoch " << format_epoch(st);
    const double score = std::isnan(st.loss_val) ? st.loss_train : st.loss_val;
    if (score < best) {
      best = score;
      save_checkpoint(model, result.best_checkpoint, &adam);
    }
  }
  save_checkpoint(model, result.final_checkpoint, &adam);
  return result;
}

// ---------------------------------------------------------------------------

/// Four-class label map predicted for one normalized image batch.
inline LabelGrid predict_labels(const Model<float>& model, const Tensor4<float>& normalized) {
  return to_four_class(argmax_channels(forward(model, normalized).probs), model.config().variant);
}

struct EvalOptions {
  std::string data;
  Split split = Split::test;
  std::optional<std::string> checkpoint;
  std::optional<Variant> variant;  // guard against checkpoint mismatch; route for oracle mode
  bool oracle = false;             // score ground-truth masks as predictions
  bool topology_filter = true;
  std::size_t batch_size = 8;
};

inline BscanMetrics score_bscan(const ScanRecord& rec, const LabelGrid& pred4, Variant variant, bool topology_filter) {
  const auto ex = extract_surfaces(pred4);
  const LabelGrid drusen_pred = finalize_drusen(pred4, ex.surfaces, variant, topology_filter);
  LabelGrid drusen_true(1, rec.mask.h(), rec.mask.w());
  for (std::size_t i = 0; i < rec.mask.size(); ++i)
    drusen_true.data()[i] = rec.mask.data()[i] == static_cast<std::uint8_t>(Class::drusen);
  return BscanMetrics{rec.patient, rec.scan, rec.index, dice_counts(drusen_pred, drusen_true),
                      surface_error(ex.surfaces, rec.truth)};
}

inline MetricsReport evaluate(const EvalOptions& o) {
  const FlushDenormals ftz;
  const Dataset ds = open_dataset(o.data);
  const auto records = load_split(ds, o.split);
  if (records.empty()) throw ValidationError("split " + to_string(o.split) + " is empty");
  std::vector<BscanMetrics> items;
  if (o.oracle) {
    const Variant v = o.variant.value_or(Variant::unet3c);
    for (const auto& r : records) items.push_back(score_bscan(r, r.mask, v, o.topology_filter));
    return aggregate_patients(std::move(items));
  }
  if (!o.checkpoint) throw ValidationError("eval needs --checkpoint unless --oracle is set");
  const Checkpoint ck = o.variant ? load_checkpoint(*o.checkpoint, *o.variant) : load_checkpoint(*o.checkpoint);
  const ModelConfig& cfg = ck.model.config();
  if (ds.height != cfg.input_h || ds.width != cfg.input_w)
    throw ValidationError("dataset resolution " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                          " does not match model input " + std::to_string(cfg.input_h) + "x" +
                          std::to_string(cfg.input_w));
  const auto samples = prepare_samples(records, cfg);
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < samples.size(); s += o.batch_size) {
    idx.clear();
    for (std::size_t i = s; i < std::min(samples.size(), s + o.batch_size); ++i) idx.push_back(i);
    const auto pred = predict_labels(ck.model, make_batch(samples, idx, cfg).first);
    for (std::size_t b = 0; b < idx.size(); ++b)
      items.push_back(score_bscan(records[idx[b]], pred.slice(b), cfg.variant, o.topology_filter));
  }
  return aggregate_patients(std::move(items));
}

// ---------------------------------------------------------------------------

struct Prediction {
  LabelGrid labels;  // four-class argmax
  ExtractedSurfaces surfaces;
  LabelGrid drusen;  // post-processed binary mask
};

/// Accepts (h, w), (1, h, w) or (1, 1, h, w) single-channel images.
inline Tensor4<float> image_from_nt4(const Nt4Array& a) {
  if (a.dtype != Nt4Dtype::f32) throw FormatError(FormatErrc::bad_dtype, 5, "expected a 32-bit real image");
  bool ok = a.dims.size() >= 2 && a.dims.size() <= 4;
  for (std::size_t i = 0; ok && i + 2 < a.dims.size(); ++i) ok = a.dims[i] == 1;
  if (!ok) throw ValidationError("input must be a single B-scan of rank 2-4 with unit leading dims");
  return tensor_from_nt4(a);
}

inline Prediction predict(const Model<float>& model, const Tensor4<float>& image, bool resize = false) {
  const FlushDenormals ftz;
  const ModelConfig& cfg = model.config();
  Tensor4<float> x = image;
  if (x.h() != cfg.input_h || x.w() != cfg.input_w) {
    if (!resize)
      throw ValidationError("input is " + std::to_string(x.h()) + "x" + std::to_string(x.w()) + ", model expects " +
                            std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                            " (pass --resize to resample)");
    x = resize_bilinear(x, cfg.input_h, cfg.input_w);
  }
  Prediction p;
  p.labels = predict_labels(model, normalize_bscan(x));
  p.surfaces = extract_surfaces(p.labels);
  p.drusen = finalize_drusen(p.labels, p.surfaces.surfaces, cfg.variant);
  return p;
}

/// Binary PPM: grayscale image with drusen red, OBRPE green, BM blue.
inline std::string overlay_ppm(const Tensor4<float>& image, const Prediction& p) {
  const std::size_t h = p.labels.h(), w = p.labels.w();
  const Tensor4<float> img = image.h() == h && image.w() == w ? image : resize_bilinear(image, h, w);
  float lo = img.data()[0], hi = img.data()[0];
  for (float v : img.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto g = static_cast<char>(static_cast<unsigned char>(std::lround(255.0f * (img(0, 0, y, x) - lo) / span)));
      char rgb[3] = {g, g, g};
      const auto c = static_cast<Class>(p.labels(0, y, x));
      if (p.drusen(0, y, x)) {
        rgb[0] = static_cast<char>(255), rgb[1] = 0, rgb[2] = 0;
      } else if (c == Class::obrpe) {
        rgb[0] = 0, rgb[1] = static_cast<char>(255), rgb[2] = 0;
      } else if (c == Class::bm) {
        rgb[0] = 0, rgb[1] = 0, rgb[2] = static_cast<char>(255);
      }
      out.append(rgb, 3);
    }
  return out;
}

inline std::string surfaces_csv(const SurfacePair& s) {
  std::string out = "column,obrpe_row,bm_row\n";
  char buf[96];
  for (std::size_t x = 0; x < s.width(); ++x) {
    auto fmt = [](const std::optional<double>& v) { return v ? *v : std::numeric_limits<double>::quiet_NaN(); };
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f\n", x, fmt(s.obrpe[x]), fmt(s.bm[x]));
    out += buf;
  }
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_TRAINING_HPP
