#pragma once

// Embedding banks and the SUSX v1 binary file format.
//
// Layout (all integers little-endian):
//   0..3    magic "SUSX"
//   4..5    u16 version (1)
//   6..7    u16 flags: bit0 labels, bit1 ids, bit2 normalized
//   8..15   u64 count
//   16..23  u64 dim
//   24..31  u64 metadata byte length
//   ...     metadata: UTF-8 JSON object of string -> string
//   ...     count*dim binary32 scalars, row-major
//   ...     bit0: count u32 labels
//   ...     bit1: count strings, each u32 byte length + bytes

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "susx/error.hpp"
#include "susx/matrix.hpp"

namespace susx {

using ClassIndex = std::uint32_t;

struct EmbeddingBank {
  Matrix data;  // count x dim, values held at binary64
  std::optional<std::vector<ClassIndex>> labels;
  std::optional<std::vector<std::string>> ids;
  bool normalized = false;
  std::map<std::string, std::string> meta;

  std::size_t count() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }

  bool operator==(const EmbeddingBank&) const = default;
};

inline constexpr std::uint16_t kBankFormatVersion = 1;
inline constexpr std::uint16_t kFlagLabels = 1u << 0;
inline constexpr std::uint16_t kFlagIds = 1u << 1;
inline constexpr std::uint16_t kFlagNormalized = 1u << 2;

inline constexpr double kNormalizedTolerance = 1e-4;
inline constexpr double kDegenerateNorm = 1e-8;

struct BankValidation {
  // When set, every label must be below this value.
  std::optional<std::size_t> num_classes;
};

/// Throws on the first violated invariant. A `num_classes` entry in
/// `bank.meta` bounds labels the same way as `opts.num_classes`.
inline void validate_bank(const EmbeddingBank& bank, const BankValidation& opts = {}) {
  if (bank.dim() == 0) throw Error(ErrorCode::MalformedHeader, "dim must be positive");
  for (std::size_t r = 0; r < bank.count(); ++r) {
    for (double v : bank.data.row(r)) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, std::to_string(r));
    }
  }
  if (bank.labels && bank.labels->size() != bank.count()) {
    throw Error(ErrorCode::DimensionMismatch, "labels length");
  }
  if (bank.ids && bank.ids->size() != bank.count()) {
    throw Error(ErrorCode::DimensionMismatch, "ids length");
  }
  std::optional<std::size_t> bound = opts.num_classes;
  if (auto it = bank.meta.find("num_classes"); it != bank.meta.end() && !bound) {
    try {
      bound = std::stoull(it->second);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedHeader, "num_classes metadata");
    }
  }
  if (bank.labels && bound) {
    for (std::size_t r = 0; r < bank.count(); ++r) {
      if ((*bank.labels)[r] >= *bound) throw Error(ErrorCode::LabelOutOfRange, std::to_string(r));
    }
  }
  if (bank.normalized) {
    for (std::size_t r = 0; r < bank.count(); ++r) {
      const double n = std::sqrt(squared_norm(bank.data.row(r)));
      if (std::abs(n - 1.0) > kNormalizedTolerance) {
        throw Error(ErrorCode::UnnormalizedInput, std::to_string(r));
      }
    }
  }
}

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::string take() && { return std::move(out_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> in) : in_(in) {}

  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  std::uint16_t u16(ErrorCode on_short) { return static_cast<std::uint16_t>(get_le(2, on_short)); }
  std::uint32_t u32(ErrorCode on_short) { return static_cast<std::uint32_t>(get_le(4, on_short)); }
  std::uint64_t u64(ErrorCode on_short) { return get_le(8, on_short); }
  float f32(ErrorCode on_short) { return std::bit_cast<float>(u32(on_short)); }
  std::string_view bytes(std::size_t n, ErrorCode on_short) {
    need(n, on_short);
    std::string_view s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, ErrorCode on_short) const {
    if (remaining() < n) throw Error(on_short, "truncated");
  }
  std::uint64_t get_le(int n, ErrorCode on_short) {
    need(static_cast<std::size_t>(n), on_short);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const char> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serializes to the SUSX v1 layout. Scalars are rounded to binary32; a value
/// that overflows binary32 is rejected rather than written as infinity.
inline std::string encode_bank(const EmbeddingBank& bank) {
  validate_bank(bank);
  detail::ByteWriter w;
  w.bytes("SUSX");
  w.u16(kBankFormatVersion);
  std::uint16_t flags = 0;
  if (bank.labels) flags |= kFlagLabels;
  if (bank.ids) flags |= kFlagIds;
  if (bank.normalized) flags |= kFlagNormalized;
  w.u16(flags);
  w.u64(bank.count());
  w.u64(bank.dim());
  const std::string meta = nlohmann::json(bank.meta).dump();
  w.u64(meta.size());
  w.bytes(meta);
  for (std::size_t r = 0; r < bank.count(); ++r) {
    for (double v : bank.data.row(r)) {
      const auto f = static_cast<float>(v);
      if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteValue, std::to_string(r));
      w.f32(f);
    }
  }
  if (bank.labels) {
    for (ClassIndex l : *bank.labels) w.u32(l);
  }
  if (bank.ids) {
    for (const auto& s : *bank.ids) {
      if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::InvalidArgument, "id too long");
      }
      w.u32(static_cast<std::uint32_t>(s.size()));
      w.bytes(s);
    }
  }
  return std::move(w).take();
}

inline EmbeddingBank decode_bank(std::span<const char> bytes, const BankValidation& opts = {}) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, ErrorCode::MalformedHeader) != "SUSX") throw Error(ErrorCode::MalformedHeader, "magic");
  if (r.u16(ErrorCode::MalformedHeader) != kBankFormatVersion) {
    throw Error(ErrorCode::MalformedHeader, "version");
  }
  const std::uint16_t flags = r.u16(ErrorCode::MalformedHeader);
  if (flags & ~(kFlagLabels | kFlagIds | kFlagNormalized)) throw Error(ErrorCode::MalformedHeader, "flags");
  const std::uint64_t count = r.u64(ErrorCode::MalformedHeader);
  const std::uint64_t dim = r.u64(ErrorCode::MalformedHeader);
  const std::uint64_t meta_len = r.u64(ErrorCode::MalformedHeader);
  if (dim == 0) throw Error(ErrorCode::MalformedHeader, "dim must be positive");
  if (meta_len > r.remaining()) throw Error(ErrorCode::MalformedHeader, "metadata length");

  EmbeddingBank bank;
  const auto meta_text = r.bytes(meta_len, ErrorCode::MalformedHeader);
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    if (!meta.is_object()) throw Error(ErrorCode::MalformedHeader, "metadata is not an object");
    for (const auto& [key, value] : meta.items()) {
      if (!value.is_string()) throw Error(ErrorCode::MalformedHeader, "metadata value for " + key);
      bank.meta.emplace(key, value.get<std::string>());
    }
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::MalformedHeader, "metadata json");
  }

  // Lower bound on remaining payload; guards the allocation below.
  const std::uint64_t scalars = count * dim;
  if (dim != 0 && scalars / dim != count) throw Error(ErrorCode::DimensionMismatch, "count*dim overflow");
  if (scalars > r.remaining() / 4) throw Error(ErrorCode::DimensionMismatch, "payload shorter than header");
  std::uint64_t fixed = scalars;
  if (flags & kFlagLabels) fixed += count;
  if (flags & kFlagIds) fixed += count;
  if (fixed > r.remaining() / 4) throw Error(ErrorCode::DimensionMismatch, "payload shorter than header");

  std::vector<double> data(static_cast<std::size_t>(scalars));
  for (auto& v : data) v = r.f32(ErrorCode::DimensionMismatch);
  bank.data = Matrix(static_cast<std::size_t>(count), static_cast<std::size_t>(dim), std::move(data));
  if (flags & kFlagLabels) {
    std::vector<ClassIndex> labels(static_cast<std::size_t>(count));
    for (auto& l : labels) l = r.u32(ErrorCode::DimensionMismatch);
    bank.labels = std::move(labels);
  }
  if (flags & kFlagIds) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t len = r.u32(ErrorCode::DimensionMismatch);
      ids.emplace_back(r.bytes(len, ErrorCode::DimensionMismatch));
    }
    bank.ids = std::move(ids);
  }
  if (r.remaining() != 0) throw Error(ErrorCode::DimensionMismatch, "trailing bytes after payload");
  bank.normalized = (flags & kFlagNormalized) != 0;
  validate_bank(bank, opts);
  return bank;
}

inline void save_bank(const EmbeddingBank& bank, const std::filesystem::path& path) {
  const std::string bytes = encode_bank(bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, path.string());
  return bytes;
}

/// Loads and validates. Rows are returned exactly as stored; normalization
/// is a separate step.
inline EmbeddingBank load_bank(const std::filesystem::path& path, const BankValidation& opts = {}) {
  const std::string bytes = read_file_bytes(path);
  return decode_bank(bytes, opts);
}

// Rows already within this distance of unit norm are kept verbatim. The
// slack covers binary32 rounding of a unit vector, which makes normalizing a
// reloaded normalized bank reproduce the same file byte for byte.
inline constexpr double kUnitNormSlack = 1e-7;

inline EmbeddingBank l2_normalize(EmbeddingBank bank) {
  for (std::size_t r = 0; r < bank.count(); ++r) {
    auto row = bank.data.row(r);
    const double norm = std::sqrt(squared_norm(std::span<const double>(row)));
    if (norm < kDegenerateNorm) throw Error(ErrorCode::DegenerateRow, std::to_string(r));
    if (std::abs(norm - 1.0) <= kUnitNormSlack) continue;
    for (double& v : row) v /= norm;
  }
  bank.normalized = true;
  return bank;
}

}  // namespace susx
