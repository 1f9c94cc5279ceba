#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include "susx/embedding_store.hpp"
#include "test_support.hpp"

namespace susx {
namespace {

namespace fs = std::filesystem;
using testing::Rng;

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("susx_store_" + name); }

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_bank(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::InvalidArgument;
}

std::uint64_t read_u64(const std::string& bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

TEST(EmbeddingStore, HeaderLayoutIsBitExact) {
  EmbeddingBank b;
  b.data = Matrix{{1, 0, 0}, {0, 1, 0}};
  b.labels = std::vector<ClassIndex>{7, 9};
  b.normalized = true;
  b.meta = {{"encoder", "RN50"}};
  const std::string bytes = encode_bank(b);
  const std::string meta = R"({"encoder":"RN50"})";

  EXPECT_EQ(bytes.substr(0, 4), "SUSX");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), kFlagLabels | kFlagNormalized);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(read_u64(bytes, 8), 2u);
  EXPECT_EQ(read_u64(bytes, 16), 3u);
  EXPECT_EQ(read_u64(bytes, 24), meta.size());
  EXPECT_EQ(bytes.substr(32, meta.size()), meta);
  const std::size_t payload = 32 + meta.size();
  ASSERT_EQ(bytes.size(), payload + 6 * 4 + 2 * 4);
  // 1.0f = 0x3f800000, little-endian.
  EXPECT_EQ(static_cast<unsigned char>(bytes[payload + 0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[payload + 3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[payload + 24]), 7);
  EXPECT_EQ(static_cast<unsigned char>(bytes[payload + 28]), 9);
}

TEST(EmbeddingStore, SaveLoadRoundTripIdentityMatrix) {
  EmbeddingBank b;
  b.data = Matrix{{1, 0, 0}, {0, 1, 0}};
  const auto path = temp_path("identity.bank");
  save_bank(b, path);
  EXPECT_EQ(load_bank(path), b);
  fs::remove(path);
}

TEST(EmbeddingStore, EmptyBankHasZeroLengthPayload) {
  EmbeddingBank b;
  b.data = Matrix(0, 512);
  const std::string bytes = encode_bank(b);
  EXPECT_EQ(bytes.size(), 32u + 2u);  // header + "{}"
  const auto back = decode_bank(bytes);
  EXPECT_EQ(back.count(), 0u);
  EXPECT_EQ(back.dim(), 512u);
  EXPECT_EQ(back, b);
}

TEST(EmbeddingStore, LabelsWithoutIdsOmitIdsSection) {
  EmbeddingBank b;
  b.data = Matrix{{0.5, 0.25}};
  b.labels = std::vector<ClassIndex>{3};
  const std::string bytes = encode_bank(b);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), kFlagLabels);
  EXPECT_EQ(bytes.size(), 32u + 2u + 2 * 4 + 4);
  const auto back = decode_bank(bytes);
  EXPECT_TRUE(back.labels.has_value());
  EXPECT_FALSE(back.ids.has_value());
}

TEST(EmbeddingStore, RandomizedRoundTripProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    EmbeddingBank b;
    const std::size_t n = testing::uniform_size(rng, 0, 6);
    const std::size_t d = testing::uniform_size(rng, 1, 5);
    b.data = testing::random_gaussian(rng, n, d);
    for (double& v : b.data.data()) v = static_cast<float>(v);
    if (rng() & 1) b.labels = testing::random_labels(rng, n, 4);
    if (rng() & 1) {
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < n; ++i) ids.push_back("img_" + std::to_string(rng() % 1000) + "\xc3\xa9");
      b.ids = ids;
    }
    if (rng() & 1) b.meta["dataset"] = "synthetic";
    EXPECT_EQ(decode_bank(encode_bank(b)), b);
  }
}

TEST(EmbeddingStore, TruncatedPayloadIsDimensionMismatch) {
  EmbeddingBank b;
  b.data = Matrix(3, 4, 0.5);
  std::string bytes = encode_bank(b);
  bytes.resize(bytes.size() - 4 * 4);  // two rows of payload
  EXPECT_EQ(decode_error(bytes), ErrorCode::DimensionMismatch);
  bytes = encode_bank(b);
  bytes += "xx";
  EXPECT_EQ(decode_error(bytes), ErrorCode::DimensionMismatch);
}

TEST(EmbeddingStore, DeclaredThreeRowsWithTwoRowPayload) {
  EmbeddingBank b;
  b.data = Matrix(2, 4, 0.5);
  std::string bytes = encode_bank(b);
  bytes[8] = 3;  // count
  EXPECT_EQ(decode_error(bytes), ErrorCode::DimensionMismatch);
}

TEST(EmbeddingStore, NanScalarIsNonFinite) {
  EmbeddingBank b;
  b.data = Matrix(2, 2, 0.5);
  std::string bytes = encode_bank(b);
  const auto nan = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  const std::size_t at = 32 + 2 + 4;  // second scalar
  for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<char>((nan >> (8 * i)) & 0xff);
  EXPECT_EQ(decode_error(bytes), ErrorCode::NonFiniteValue);

  b.data(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(encode_bank(b), Error);
  b.data(0, 0) = 1e300;  // overflows binary32
  EXPECT_THROW(encode_bank(b), Error);
}

TEST(EmbeddingStore, HeaderErrors) {
  EmbeddingBank b;
  b.data = Matrix(1, 2, 0.5);
  const std::string good = encode_bank(b);

  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorCode::MalformedHeader);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(decode_error(bad), ErrorCode::MalformedHeader);
  bad = good;
  bad[6] = 0x10;
  EXPECT_EQ(decode_error(bad), ErrorCode::MalformedHeader);
  bad = good;
  bad[16] = 0;  // dim 0
  EXPECT_EQ(decode_error(bad), ErrorCode::MalformedHeader);
  EXPECT_EQ(decode_error(good.substr(0, 20)), ErrorCode::MalformedHeader);

  // Metadata that is valid JSON but not an object of strings.
  for (const std::string meta : {"[1,2]", R"({"a":1})", "{nope"}) {
    std::string s = good.substr(0, 24);
    for (int i = 0; i < 8; ++i) s += static_cast<char>(i == 0 ? meta.size() : 0);
    s += meta;
    s += good.substr(34);
    EXPECT_EQ(decode_error(s), ErrorCode::MalformedHeader) << meta;
  }
}

TEST(EmbeddingStore, LabelBoundsFromOptionsOrMetadata) {
  EmbeddingBank b;
  b.data = Matrix(2, 2, 0.5);
  b.labels = std::vector<ClassIndex>{0, 5};
  const std::string bytes = encode_bank(b);
  EXPECT_NO_THROW(decode_bank(bytes));
  try {
    decode_bank(bytes, {3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
    EXPECT_EQ(e.detail(), "1");
  }
  b.meta["num_classes"] = "3";
  EXPECT_THROW(encode_bank(b), Error);
}

TEST(EmbeddingStore, NormalizedFlagIsChecked) {
  EmbeddingBank b;
  b.data = Matrix{{3, 4}};
  b.normalized = true;
  EXPECT_THROW(encode_bank(b), Error);
}

TEST(EmbeddingStore, LoadDoesNotNormalize) {
  EmbeddingBank b;
  b.data = Matrix{{3, 4}};
  const auto back = decode_bank(encode_bank(b));
  EXPECT_FALSE(back.normalized);
  EXPECT_EQ(back.data(0, 0), 3.0);
}

TEST(EmbeddingStore, MissingFileIsIoFailure) {
  try {
    load_bank(temp_path("does_not_exist.bank"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}

TEST(L2Normalize, Examples) {
  EmbeddingBank b;
  b.data = Matrix{{3, 4}, {1, 0}};
  const auto n = l2_normalize(b);
  EXPECT_TRUE(n.normalized);
  EXPECT_DOUBLE_EQ(n.data(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.data(0, 1), 0.8);
  EXPECT_EQ(n.data(1, 0), 1.0);
  EXPECT_EQ(n.data(1, 1), 0.0);
}

TEST(L2Normalize, DegenerateRowCarriesIndex) {
  EmbeddingBank b;
  b.data = Matrix{{1, 0}, {0, 0}};
  try {
    l2_normalize(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateRow);
    EXPECT_STREQ(e.what(), "DegenerateRow:1");
  }
}

TEST(L2Normalize, IdempotentAndCosinePreserving) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    EmbeddingBank b;
    b.data = testing::random_gaussian(rng, 6, 9, 3.0);
    const auto once = l2_normalize(b);
    const auto twice = l2_normalize(once);
    EXPECT_LE(testing::max_abs_diff(once.data, twice.data), 1e-12);
    for (std::size_t r = 0; r < 6; ++r) {
      EXPECT_NEAR(std::sqrt(squared_norm(once.data.row(r))), 1.0, 1e-6);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        const double raw = dot(b.data.row(i), b.data.row(j)) /
                           std::sqrt(squared_norm(b.data.row(i)) * squared_norm(b.data.row(j)));
        EXPECT_NEAR(dot(once.data.row(i), once.data.row(j)), raw, 1e-12);
      }
    }
  }
}

TEST(L2Normalize, ReloadedNormalizedBankIsStable) {
  Rng rng(7);
  EmbeddingBank b;
  b.data = testing::random_gaussian(rng, 40, 64);
  const std::string once = encode_bank(l2_normalize(b));
  const std::string twice = encode_bank(l2_normalize(decode_bank(once)));
  EXPECT_EQ(once, twice);
}

}  // namespace
}  // namespace susx
