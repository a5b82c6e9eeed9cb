// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_NT4_HPP
#define PPMUNET_NT4_HPP

// NT4 array files:
//   "NT4\0" | version 0x01 | dtype (0x01 f32, 0x02 u8) | rank | rank x u32 dims | payload
// Everything little-endian, payload row-major.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ppmunet/bytes.hpp"
#include "ppmunet/tensor.hpp"

namespace ppmunet {

enum class Nt4Dtype : std::uint8_t { f32 = 0x01, u8 = 0x02 };

inline constexpr std::uint8_t kNt4Version = 0x01;

/// Decoded NT4 file. Exactly one of f32/u8 is populated, per dtype.
struct Nt4Array {
  Nt4Dtype dtype = Nt4Dtype::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

/// Rank byte plus dims; shared with the checkpoint format.
inline void write_dims(ByteWriter& out, std::span<const std::uint32_t> dims) {
  out.u8(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) out.u32(d);
}

inline std::vector<std::uint32_t> read_dims(ByteReader& in) {
  const std::size_t at = in.offset();
  const std::uint8_t rank = in.u8();
  if (rank == 0) throw FormatError(FormatErrc::shape_mismatch, at, "rank 0");
  std::vector<std::uint32_t> dims(rank);
  for (auto& d : dims) {
    const std::size_t pos = in.offset();
    d = in.u32();
    if (d == 0) throw FormatError(FormatErrc::shape_mismatch, pos, "zero dimension");
  }
  return dims;
}

inline std::vector<std::uint8_t> encode_nt4(const Nt4Array& a) {
  ByteWriter out;
  out.bytes(std::string_view("NT4\0", 4));
  out.u8(kNt4Version);
  out.u8(static_cast<std::uint8_t>(a.dtype));
  write_dims(out, a.dims);
  if (a.dtype == Nt4Dtype::f32) {
    if (a.f32.size() != a.count()) throw ValidationError("NT4 payload length does not match dims");
    for (float v : a.f32) out.f32(v);
  } else {
    if (a.u8.size() != a.count()) throw ValidationError("NT4 payload length does not match dims");
    out.bytes(a.u8);
  }
  return out.take();
}

inline Nt4Array decode_nt4(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.remaining() < 4) throw FormatError(FormatErrc::unexpected_end, bytes.size());
  if (in.string(4) != std::string("NT4\0", 4)) throw FormatError(FormatErrc::bad_magic, 0);
  if (in.u8() != kNt4Version) throw FormatError(FormatErrc::bad_version, 4);
  Nt4Array a;
  const std::uint8_t dtype = in.u8();
  if (dtype != 0x01 && dtype != 0x02) throw FormatError(FormatErrc::bad_dtype, 5);
  a.dtype = static_cast<Nt4Dtype>(dtype);
  a.dims = read_dims(in);
  const std::size_t n = a.count();
  if (a.dtype == Nt4Dtype::f32) {
    if (in.remaining() < n * 4) throw FormatError(FormatErrc::unexpected_end, bytes.size());
    a.f32.resize(n);
    for (auto& v : a.f32) v = in.f32();
  } else {
    auto raw = in.bytes(n);
    a.u8.assign(raw.begin(), raw.end());
  }
  if (!in.at_end()) throw FormatError(FormatErrc::trailing_data, in.offset());
  return a;
}

inline Nt4Array read_nt4(const std::filesystem::path& path) { return decode_nt4(read_file(path)); }

inline void write_nt4(const std::filesystem::path& path, const Nt4Array& a) {
  write_file(path, encode_nt4(a));
}

/// Tensor as a rank-4 f32 array.
inline Nt4Array to_nt4(const Tensor4<float>& t) {
  Nt4Array a;
  a.dtype = Nt4Dtype::f32;
  const auto& s = t.shape();
  a.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  a.f32 = t.vector();
  return a;
}

/// Labels as a u8 array; rank 2 (h, w) for a single slice when `squeeze` is set.
inline Nt4Array to_nt4(const LabelGrid& g, bool squeeze = false) {
  Nt4Array a;
  a.dtype = Nt4Dtype::u8;
  if (squeeze && g.n() == 1)
    a.dims = {static_cast<std::uint32_t>(g.h()), static_cast<std::uint32_t>(g.w())};
  else
    a.dims = {static_cast<std::uint32_t>(g.n()), static_cast<std::uint32_t>(g.h()),
              static_cast<std::uint32_t>(g.w())};
  a.u8.assign(g.data().begin(), g.data().end());
  return a;
}

/// f32 array of rank 1..4 as a tensor; missing leading dims become 1.
inline Tensor4<float> tensor_from_nt4(const Nt4Array& a) {
  if (a.dtype != Nt4Dtype::f32) throw FormatError(FormatErrc::bad_dtype, 5, "expected 32-bit real payload");
  if (a.dims.size() > 4) throw FormatError(FormatErrc::shape_mismatch, 6, "rank above 4");
  std::size_t d[4] = {1, 1, 1, 1};
  const std::size_t off = 4 - a.dims.size();
  for (std::size_t i = 0; i < a.dims.size(); ++i) d[off + i] = a.dims[i];
  return Tensor4<float>(Shape4{d[0], d[1], d[2], d[3]}, a.f32);
}

/// u8 array of rank 2 (h, w) or 3 (n, h, w) as labels.
inline LabelGrid labels_from_nt4(const Nt4Array& a) {
  if (a.dtype != Nt4Dtype::u8) throw FormatError(FormatErrc::bad_dtype, 5, "expected byte labels");
  if (a.dims.size() == 2) return LabelGrid(1, a.dims[0], a.dims[1], a.u8);
  if (a.dims.size() == 3) return LabelGrid(a.dims[0], a.dims[1], a.dims[2], a.u8);
  throw FormatError(FormatErrc::shape_mismatch, 6, "label arrays must have rank 2 or 3");
}

}  // namespace ppmunet

#endif  // PPMUNET_NT4_HPP
