// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_NETWORK_HPP
#define PPMUNET_NETWORK_HPP

// U-Net backbone with optional pyramid modules (PM).
//
// Encoder block l has two 3x3 conv+ReLU layers producing N_l = N0 * 2^l maps.
// With pyramid pooling, every encoder block except the bottleneck feeds
//   - a downsampling PM: maxpool(x) ++ branches upsampled to h/2 x w/2
//   - a skip PM:         x          ++ branches upsampled to h x w
// where each branch is avgpool(bin b) -> 1x1 conv -> ReLU -> nearest upsample,
// N/2 maps for the 2x2 bin and N/4 for all others (5N/2 total with the default
// bins). Decoder level l: 2x2 transposed conv to N_l, concat with the skip,
// conv block. Head: 1x1 conv to the class count, softmax over channels.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppmunet/rng.hpp"
#include "ppmunet/tape.hpp"

namespace ppmunet {

enum class Variant { unet2c, unet3c, unetppm };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::unet2c: return "unet2c";
    case Variant::unet3c: return "unet3c";
    case Variant::unetppm: return "unetppm";
  }
  return "?";
}

/// Accepts "unet2c" as well as the CLI spelling "unet-2c".
inline Variant parse_variant(std::string s) {
  std::erase(s, '-');
  std::erase(s, '_');
  if (s == "unet2c") return Variant::unet2c;
  if (s == "unet3c") return Variant::unet3c;
  if (s == "unetppm") return Variant::unetppm;
  throw ValidationError("unknown variant '" + s + "' (expected unet-2c, unet-3c or unet-ppm)");
}

struct ModelConfig {
  Variant variant = Variant::unetppm;
  std::size_t depth = 5;
  std::size_t base_channels = 32;
  std::vector<std::size_t> bins{1, 2, 3, 6, 16};
  std::size_t input_h = 256;
  std::size_t input_w = 256;

  /// Background/OBRPE/BM for the two-class-layer baseline, plus drusen otherwise.
  std::size_t num_classes() const { return variant == Variant::unet2c ? 3 : 4; }
  bool pyramid() const { return variant == Variant::unetppm; }

  std::size_t channels(std::size_t level) const { return base_channels << level; }
  std::size_t size_h(std::size_t level) const { return input_h >> level; }
  std::size_t size_w(std::size_t level) const { return input_w >> level; }

  /// Width of the 1x1 reduction for a pyramid branch over N maps.
  static std::size_t branch_width(std::size_t n, std::size_t bin) { return bin == 2 ? n / 2 : n / 4; }

  std::size_t pm_channels(std::size_t n) const {
    std::size_t c = n;
    for (auto b : bins) c += branch_width(n, b);
    return c;
  }

  /// Maps leaving encoder level l toward the next level and toward the decoder.
  std::size_t down_channels(std::size_t l) const { return pyramid() ? pm_channels(channels(l)) : channels(l); }
  std::size_t skip_channels(std::size_t l) const { return down_channels(l); }

  void validate() const {
    if (depth < 2) throw ValidationError("depth must be >= 2");
    if (base_channels == 0 || base_channels % 4 != 0)
      throw ValidationError("base_channels must be a positive multiple of 4, got " + std::to_string(base_channels));
    const std::size_t div = std::size_t{1} << (depth - 1);
    if (input_h == 0 || input_w == 0 || input_h % div != 0 || input_w % div != 0)
      throw ValidationError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                            " must be divisible by 2^(depth-1) = " + std::to_string(div));
    if (bins.empty() || bins.front() != 1) throw ValidationError("bins must start at 1");
    for (std::size_t i = 1; i < bins.size(); ++i)
      if (bins[i] <= bins[i - 1]) throw ValidationError("bins must be strictly increasing");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["variant"] = to_string(variant);
    j["depth"] = depth;
    j["base_channels"] = base_channels;
    j["bins"] = bins;
    j["input_h"] = input_h;
    j["input_w"] = input_w;
    j["num_classes"] = num_classes();
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.depth = j.at("depth").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.bins = j.at("bins").get<std::vector<std::size_t>>();
    c.input_h = j.at("input_h").get<std::size_t>();
    c.input_w = j.at("input_w").get<std::size_t>();
    if (j.contains("num_classes") && j.at("num_classes").get<std::size_t>() != c.num_classes())
      throw ValidationError("num_classes does not match variant");
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace detail {
inline std::uint64_t next_model_uid() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

template <typename T>
class Model {
 public:
  Model(ModelConfig config, ParamRegistry<T> params)
      : config_(std::move(config)), params_(std::move(params)), uid_(detail::next_model_uid()) {}

  Model(const Model& o) : config_(o.config_), params_(o.params_), uid_(detail::next_model_uid()), version_(o.version_) {}
  Model& operator=(const Model& o) {
    config_ = o.config_;
    params_ = o.params_;
    uid_ = detail::next_model_uid();
    version_ = o.version_;
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  const ParamRegistry<T>& params() const noexcept { return params_; }

  /// Mutable access for optimizers and loaders; invalidates outstanding tapes.
  ParamRegistry<T>& mutable_params() noexcept {
    ++version_;
    return params_;
  }

  std::uint64_t uid() const noexcept { return uid_; }
  std::uint64_t version() const noexcept { return version_; }

  template <typename U>
  Model<U> cast() const {
    return Model<U>(config_, params_.template cast<U>());
  }

 private:
  ModelConfig config_;
  ParamRegistry<T> params_;
  std::uint64_t uid_;
  std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Layer plan: the single source of truth for names and channel counts, shared
// by build_model, forward and shape_report.

enum class PmMode { downsample, skip };

inline std::string enc_name(std::size_t l, std::size_t depth) {
  return l + 1 == depth ? std::string("bottleneck") : "enc" + std::to_string(l);
}
inline std::string pm_name(std::size_t l, PmMode mode) {
  return "enc" + std::to_string(l) + (mode == PmMode::downsample ? ".pm_down" : ".pm_skip");
}
inline std::string branch_name(const std::string& pm, std::size_t bin) { return pm + ".bin" + std::to_string(bin); }

namespace detail {

template <typename T>
void add_conv(ParamRegistry<T>& reg, RngStream& rng, const std::string& layer, std::size_t c_in, std::size_t c_out,
              std::size_t k) {
  reg.add(layer + ".weight", he_normal_init<T>(Shape4{c_out, c_in, k, k}, c_in * k * k, rng), false);
  reg.add(layer + ".bias", Tensor4<T>(Shape4{c_out, 1, 1, 1}), true);
}

// He fan-in of a 2x2 stride-2 transposed conv: each output sees c_in inputs.
template <typename T>
void add_tconv(ParamRegistry<T>& reg, RngStream& rng, const std::string& layer, std::size_t c_in, std::size_t c_out) {
  reg.add(layer + ".weight", he_normal_init<T>(Shape4{c_in, c_out, 2, 2}, c_in, rng), false);
  reg.add(layer + ".bias", Tensor4<T>(Shape4{c_out, 1, 1, 1}), true);
}

template <typename T>
void add_pm(ParamRegistry<T>& reg, RngStream& rng, const ModelConfig& cfg, const std::string& pm, std::size_t n) {
  for (auto b : cfg.bins) add_conv(reg, rng, branch_name(pm, b), n, ModelConfig::branch_width(n, b), 1);
}

}  // namespace detail

/// Builds the parameter registry in canonical order: encoder top-down (each
/// block followed by its PMs), bottleneck, decoder bottom-up, head.
template <typename T = float>
Model<T> build_model(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  ParamRegistry<T> reg;
  const std::size_t D = cfg.depth;
  std::size_t c_in = 1;
  for (std::size_t l = 0; l < D; ++l) {
    const std::string name = enc_name(l, D);
    const std::size_t n = cfg.channels(l);
    detail::add_conv(reg, rng, name + ".conv1", c_in, n, 3);
    detail::add_conv(reg, rng, name + ".conv2", n, n, 3);
    if (l + 1 < D && cfg.pyramid()) {
      detail::add_pm(reg, rng, cfg, pm_name(l, PmMode::downsample), n);
      detail::add_pm(reg, rng, cfg, pm_name(l, PmMode::skip), n);
    }
    c_in = l + 1 < D ? cfg.down_channels(l) : n;
  }
  for (std::size_t l = D - 1; l-- > 0;) {
    const std::string name = "dec" + std::to_string(l);
    const std::size_t n = cfg.channels(l);
    detail::add_tconv(reg, rng, name + ".up", cfg.channels(l + 1), n);
    detail::add_conv(reg, rng, name + ".conv1", n + cfg.skip_channels(l), n, 3);
    detail::add_conv(reg, rng, name + ".conv2", n, n, 3);
  }
  detail::add_conv(reg, rng, "head", cfg.channels(0), cfg.num_classes(), 1);
  return Model<T>(cfg, std::move(reg));
}

/// Records one pyramid module on the tape and returns the concatenated node.
template <typename T>
std::size_t pyramid_module(OpTape<T>& tape, const ParamRegistry<T>& reg, const ModelConfig& cfg, std::size_t x,
                           PmMode mode, const std::string& pm) {
  const Tensor4<T>& xv = tape.value(x);
  if (xv.c() % 4 != 0)
    throw ValidationError("pyramid module input channels must be divisible by 4, got " + std::to_string(xv.c()));
  const std::size_t main = mode == PmMode::downsample ? tape.maxpool2x2(x) : x;
  const std::size_t sh = tape.value(main).h(), sw = tape.value(main).w();
  std::vector<std::size_t> parts{main};
  for (auto b : cfg.bins) {
    const std::string br = branch_name(pm, b);
    // Bins never exceed the output grid, so the upsample below is never a shrink.
    const std::size_t pooled = tape.adaptive_avg_pool(x, std::min({b, sh, sw}));
    const std::size_t reduced = tape.relu(tape.conv2d(pooled, reg.at(br + ".weight"), reg.at(br + ".bias")));
    parts.push_back(tape.upsample_nearest(reduced, sh, sw));
  }
  const std::size_t out = tape.concat_channels(parts);
  tape.label(out, pm);
  return out;
}

/// Standalone PM evaluation over a value, using the parameters registered under `pm`.
template <typename T>
Tensor4<T> pyramid_module(const Model<T>& model, const Tensor4<T>& x, PmMode mode, const std::string& pm) {
  OpTape<T> tape(model.params(), model.uid(), model.version());
  const std::size_t in = tape.input(x);
  return tape.value(pyramid_module(tape, model.params(), model.config(), in, mode, pm));
}

template <typename T>
struct ForwardResult {
  Tensor4<T> probs;
  OpTape<T> tape;
  std::size_t output_node;
};

namespace detail {
template <typename T>
std::size_t conv_relu(OpTape<T>& tape, const ParamRegistry<T>& reg, std::size_t x, const std::string& layer) {
  const std::size_t y = tape.relu(tape.conv2d(x, reg.at(layer + ".weight"), reg.at(layer + ".bias")));
  tape.label(y, layer);
  return y;
}
}  // namespace detail

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor4<T>& batch) {
  const ModelConfig& cfg = model.config();
  if (batch.c() != 1 || batch.h() != cfg.input_h || batch.w() != cfg.input_w)
    throw ValidationError("forward: expected batch of 1x" + std::to_string(cfg.input_h) + "x" +
                          std::to_string(cfg.input_w) + " images, got " + to_string(batch.shape()));
  const auto& reg = model.params();
  OpTape<T> tape(reg, model.uid(), model.version());
  std::size_t x = tape.input(batch);
  tape.label(x, "input");
  const std::size_t D = cfg.depth;
  std::vector<std::size_t> skips(D - 1);
  for (std::size_t l = 0; l < D; ++l) {
    const std::string name = enc_name(l, D);
    const std::size_t h = detail::conv_relu(tape, reg, detail::conv_relu(tape, reg, x, name + ".conv1"), name + ".conv2");
    if (l + 1 == D) {
      x = h;
    } else if (cfg.pyramid()) {
      x = pyramid_module(tape, reg, cfg, h, PmMode::downsample, pm_name(l, PmMode::downsample));
      skips[l] = pyramid_module(tape, reg, cfg, h, PmMode::skip, pm_name(l, PmMode::skip));
    } else {
      x = tape.maxpool2x2(h);
      tape.label(x, name + ".pool");
      skips[l] = h;
    }
  }
  for (std::size_t l = D - 1; l-- > 0;) {
    const std::string name = "dec" + std::to_string(l);
    const std::size_t up = tape.tconv2x2(x, reg.at(name + ".up.weight"), reg.at(name + ".up.bias"));
    tape.label(up, name + ".up");
    const std::size_t cat = tape.concat_channels({up, skips[l]});
    tape.label(cat, name + ".concat");
    x = detail::conv_relu(tape, reg, detail::conv_relu(tape, reg, cat, name + ".conv1"), name + ".conv2");
  }
  const std::size_t logits = tape.conv2d(x, reg.at("head.weight"), reg.at("head.bias"));
  tape.label(logits, "head");
  const std::size_t probs = tape.softmax_channels(logits);
  Tensor4<T> p = tape.value(probs);
  return ForwardResult<T>{std::move(p), std::move(tape), probs};
}

/// Gradient of a scalar loss w.r.t. every registered parameter, given dL/dprobs.
template <typename T>
Gradients<T> backward(const Model<T>& model, const ForwardResult<T>& fwd, const Tensor4<T>& dloss_dprobs) {
  if (fwd.tape.owner() != model.uid() || fwd.tape.version() != model.version())
    throw ValidationError("backward: stale tape (recorded for a different model or parameter version)");
  return fwd.tape.backward(fwd.output_node, dloss_dprobs);
}

// ---------------------------------------------------------------------------

struct ShapeRow {
  std::string layer;
  std::size_t c, h, w;
  friend bool operator==(const ShapeRow&, const ShapeRow&) = default;
};

/// Output dims of every labelled stage, derived from the config alone.
inline std::vector<ShapeRow> shape_report(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ShapeRow> rows;
  const std::size_t D = cfg.depth;
  rows.push_back({"input", 1, cfg.input_h, cfg.input_w});
  for (std::size_t l = 0; l < D; ++l) {
    const std::string name = enc_name(l, D);
    const std::size_t n = cfg.channels(l), h = cfg.size_h(l), w = cfg.size_w(l);
    rows.push_back({name + ".conv1", n, h, w});
    rows.push_back({name + ".conv2", n, h, w});
    if (l + 1 == D) break;
    if (cfg.pyramid()) {
      rows.push_back({pm_name(l, PmMode::downsample), cfg.down_channels(l), h / 2, w / 2});
      rows.push_back({pm_name(l, PmMode::skip), cfg.skip_channels(l), h, w});
    } else {
      rows.push_back({name + ".pool", n, h / 2, w / 2});
    }
  }
  for (std::size_t l = D - 1; l-- > 0;) {
    const std::string name = "dec" + std::to_string(l);
    const std::size_t n = cfg.channels(l), h = cfg.size_h(l), w = cfg.size_w(l);
    rows.push_back({name + ".up", n, h, w});
    rows.push_back({name + ".concat", n + cfg.skip_channels(l), h, w});
    rows.push_back({name + ".conv1", n, h, w});
    rows.push_back({name + ".conv2", n, h, w});
  }
  rows.push_back({"head", cfg.num_classes(), cfg.input_h, cfg.input_w});
  return rows;
}

inline std::string format_shape_report(const std::vector<ShapeRow>& rows) {
  std::string out;
  for (const auto& r : rows)
    out += r.layer + " " + std::to_string(r.c) + "x" + std::to_string(r.h) + "x" + std::to_string(r.w) + "\n";
  return out;
}

}  // namespace ppmunet

#endif  // PPMUNET_NETWORK_HPP
