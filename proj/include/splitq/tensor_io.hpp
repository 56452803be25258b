// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Tensor-dump file format (little-endian, no padding):
//
//   magic   "SPQT"         4 bytes
//   version u32 = 1
//   kind    u8             0 = Matrix, 1 = ActivationBatch
//   rows    u64
//   cols    u64
//   values  f64 x rows*cols, row-major
//   tags    u8 x rows      only when kind = 1; 0 = Text, 1 = Vision

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "splitq/errors.hpp"
#include "splitq/matrix.hpp"

namespace splitq {

inline constexpr std::array<char, 4> kTensorMagic = {'S', 'P', 'Q', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class TensorKind : std::uint8_t { Matrix = 0, ActivationBatch = 1 };

using TensorPayload = std::variant<Matrix, ActivationBatch>;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline void encode_header(std::vector<std::uint8_t>& out, TensorKind kind, const Matrix& m) {
  out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
  put_le<std::uint32_t>(out, kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(kind));
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint64_t>(out, m.cols());
  for (double v : m.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const Matrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(29 + 8 * m.size());
  detail::encode_header(out, TensorKind::Matrix, m);
  return out;
}

inline std::vector<std::uint8_t> encode_tensor(const ActivationBatch& b) {
  std::vector<std::uint8_t> out;
  out.reserve(29 + 8 * b.data().size() + b.tokens());
  detail::encode_header(out, TensorKind::ActivationBatch, b.data());
  for (ModalityTag t : b.tags()) out.push_back(static_cast<std::uint8_t>(t));
  return out;
}

inline TensorPayload decode_tensor(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 1 + 8 + 8;
  if (bytes.size() < kHeader) throw FormatError("truncated payload: header incomplete");
  if (std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0) throw FormatError("bad magic");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kTensorVersion)
    throw FormatError("unsupported version " + std::to_string(version));
  const std::uint8_t kind = bytes[8];
  if (kind > 1) throw FormatError("unknown tensor kind " + std::to_string(kind));
  const auto rows = detail::get_le<std::uint64_t>(bytes.data() + 9);
  const auto cols = detail::get_le<std::uint64_t>(bytes.data() + 17);

  const std::size_t available = bytes.size() - kHeader;
  if (cols != 0 && rows > available / 8 / cols) throw FormatError("truncated payload");
  const std::size_t count = static_cast<std::size_t>(rows * cols);

  std::vector<double> values(count);
  const std::uint8_t* p = bytes.data() + kHeader;
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 8 * i));
    if (!std::isfinite(values[i])) throw FormatError("non-finite value at index " + std::to_string(i));
  }
  const std::size_t rest = available - 8 * count;
  Matrix data(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(values));

  if (kind == static_cast<std::uint8_t>(TensorKind::Matrix)) {
    if (rest != 0) throw FormatError("trailing bytes after matrix payload");
    return data;
  }
  if (rest != rows) {
    throw FormatError("tag-length mismatch: " + std::to_string(rest) + " tag bytes for " +
                      std::to_string(rows) + " rows");
  }
  std::vector<ModalityTag> tags(static_cast<std::size_t>(rows));
  const std::uint8_t* t = p + 8 * count;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (t[i] > 1) throw FormatError("invalid modality tag " + std::to_string(t[i]));
    tags[i] = static_cast<ModalityTag>(t[i]);
  }
  if (rows == 0) throw FormatError("activation batch with zero tokens");
  return ActivationBatch(std::move(data), std::move(tags));
}

namespace detail {

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void save_tensor(const std::filesystem::path& path, const Matrix& m) {
  if (!all_finite(m)) throw FormatError("non-finite value in matrix");
  detail::write_bytes(path, encode_tensor(m));
}

inline void save_tensor(const std::filesystem::path& path, const ActivationBatch& b) {
  if (!all_finite(b.data())) throw FormatError("non-finite value in activation batch");
  detail::write_bytes(path, encode_tensor(b));
}

inline TensorPayload load_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  return decode_tensor(bytes);
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  auto payload = load_tensor(path);
  if (auto* m = std::get_if<Matrix>(&payload)) return std::move(*m);
  throw FormatError(path.string() + ": expected a matrix, found an activation batch");
}

inline ActivationBatch load_batch(const std::filesystem::path& path) {
  auto payload = load_tensor(path);
  if (auto* b = std::get_if<ActivationBatch>(&payload)) return std::move(*b);
  throw FormatError(path.string() + ": expected an activation batch, found a matrix");
}

}  // namespace splitq
