// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_ERROR_HPP
#define PPMUNET_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ppmunet {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a precondition: bad shapes, bad flags, impossible configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A run could not complete: I/O failure, non-finite loss.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

enum class FormatErrc {
  bad_magic,
  bad_version,
  bad_dtype,
  unexpected_end,
  trailing_data,
  unknown_parameter,
  shape_mismatch,
  config_mismatch,
  variant_mismatch,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::bad_version: return "unsupported version";
    case FormatErrc::bad_dtype: return "unsupported dtype";
    case FormatErrc::unexpected_end: return "unexpected end";
    case FormatErrc::trailing_data: return "trailing data";
    case FormatErrc::unknown_parameter: return "unknown parameter";
    case FormatErrc::shape_mismatch: return "shape mismatch";
    case FormatErrc::config_mismatch: return "config mismatch";
    case FormatErrc::variant_mismatch: return "variant mismatch";
  }
  return "format error";
}

/// Malformed NT4 or PUN1 bytes. Carries the byte offset where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(FormatErrc code, std::size_t offset, const std::string& detail = {})
      : Error(std::string(to_string(code)) + " at byte " + std::to_string(offset) +
              (detail.empty() ? "" : ": " + detail)),
        code_(code),
        offset_(offset) {}

  FormatErrc code() const noexcept { return code_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  FormatErrc code_;
  std::size_t offset_;
};

}  // namespace ppmunet

#endif  // PPMUNET_ERROR_HPP
