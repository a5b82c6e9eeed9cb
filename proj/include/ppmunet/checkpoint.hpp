// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_CHECKPOINT_HPP
#define PPMUNET_CHECKPOINT_HPP

// PUN1 checkpoints:
//   "PUN1" | u32 json length | config as key-sorted compact JSON
//   per parameter, registry order: u16 name length | name | rank | u32 dims | f32 payload
//   optional: "ADAM" | u64 step | 4 x f64 (lr, beta1, beta2, eps) | first moments | second moments
// Moments use the per-parameter layout above. All integers little-endian.

#include <filesystem>
#include <optional>
#include <string>

#include "ppmunet/adam.hpp"
#include "ppmunet/nt4.hpp"

namespace ppmunet {

struct Checkpoint {
  Model<float> model;
  std::optional<AdamState<float>> adam;
};

namespace detail {

inline std::vector<std::uint32_t> param_dims(const Param<float>& p) {
  const auto& s = p.value.shape();
  if (p.is_vector) return {static_cast<std::uint32_t>(s.n)};
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

inline void write_tensor_entry(ByteWriter& out, const Param<float>& p, const Tensor4<float>& value) {
  out.u16(static_cast<std::uint16_t>(p.name.size()));
  out.bytes(p.name);
  write_dims(out, param_dims(p));
  for (float v : value.data()) out.f32(v);
}

// Reads one entry into `dst`, which must be the registry slot `expected`.
inline void read_tensor_entry(ByteReader& in, const ParamRegistry<float>& reg, std::size_t expected,
                              Tensor4<float>& dst) {
  const std::size_t at = in.offset();
  const std::string name = in.string(in.u16());
  if (name != reg[expected].name) {
    if (!reg.find(name)) throw FormatError(FormatErrc::unknown_parameter, at, name);
    throw FormatError(FormatErrc::config_mismatch, at, "parameter " + name + " out of order");
  }
  const std::size_t dims_at = in.offset();
  if (read_dims(in) != param_dims(reg[expected]))
    throw FormatError(FormatErrc::shape_mismatch, dims_at, "for parameter " + name);
  for (float& v : dst.data()) v = in.f32();
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const AdamState<float>* adam = nullptr) {
  ByteWriter out;
  out.bytes(std::string_view("PUN1"));
  const std::string cfg = model.config().to_json().dump();
  out.u32(static_cast<std::uint32_t>(cfg.size()));
  out.bytes(cfg);
  const auto& reg = model.params();
  for (const auto& p : reg) detail::write_tensor_entry(out, p, p.value);
  if (adam != nullptr) {
    out.bytes(std::string_view("ADAM"));
    out.u64(adam->step);
    out.f64(adam->hyper.learning_rate);
    out.f64(adam->hyper.beta1);
    out.f64(adam->hyper.beta2);
    out.f64(adam->hyper.epsilon);
    for (std::size_t i = 0; i < reg.size(); ++i) detail::write_tensor_entry(out, reg[i], adam->m[i]);
    for (std::size_t i = 0; i < reg.size(); ++i) detail::write_tensor_entry(out, reg[i], adam->v[i]);
  }
  return out.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.remaining() < 4) throw FormatError(FormatErrc::unexpected_end, bytes.size());
  if (in.string(4) != "PUN1") throw FormatError(FormatErrc::bad_magic, 0);
  const std::size_t cfg_at = in.offset();
  const std::string cfg_text = in.string(in.u32());
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::config_mismatch, cfg_at, e.what());
  } catch (const ValidationError& e) {
    throw FormatError(FormatErrc::config_mismatch, cfg_at, e.what());
  }
  RngStream rng(0, 0);
  Model<float> model = build_model<float>(cfg, rng);
  auto& reg = model.mutable_params();
  for (std::size_t i = 0; i < reg.size(); ++i) detail::read_tensor_entry(in, reg, i, reg[i].value);
  std::optional<AdamState<float>> adam;
  if (!in.at_end()) {
    const std::size_t tag_at = in.offset();
    if (in.remaining() < 4 || in.string(4) != "ADAM") throw FormatError(FormatErrc::trailing_data, tag_at);
    AdamState<float> st = AdamState<float>::init(reg);
    st.step = in.u64();
    st.hyper.learning_rate = in.f64();
    st.hyper.beta1 = in.f64();
    st.hyper.beta2 = in.f64();
    st.hyper.epsilon = in.f64();
    for (std::size_t i = 0; i < reg.size(); ++i) detail::read_tensor_entry(in, reg, i, st.m[i]);
    for (std::size_t i = 0; i < reg.size(); ++i) detail::read_tensor_entry(in, reg, i, st.v[i]);
    if (!in.at_end()) throw FormatError(FormatErrc::trailing_data, in.offset());
    adam = std::move(st);
  }
  return Checkpoint{std::move(model), std::move(adam)};
}

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                            const AdamState<float>* adam = nullptr) {
  write_file(path, encode_checkpoint(model, adam));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

/// Loads and rejects checkpoints trained for a different variant.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, Variant expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.model.config().variant != expected)
    throw FormatError(FormatErrc::variant_mismatch, 8,
                      "checkpoint holds " + to_string(ck.model.config().variant) + ", requested " +
                          to_string(expected));
  return ck;
}

}  // namespace ppmunet

#endif  // PPMUNET_CHECKPOINT_HPP
