#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "susx/error.hpp"

namespace susx {

/// Dense row-major matrix with value semantics. Shape is kept even when one
/// extent is zero, so a 0x512 matrix still reports 512 columns.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error(ErrorCode::DimensionMismatch, "matrix payload");
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorCode::DimensionMismatch, "ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;

// Reductions accumulate in ascending index order from +0.0, so results are
// reproducible across runs and thread schedules.
template <typename T>
T dot(std::span<const T> a, std::span<const T> b) noexcept {
  assert(a.size() == b.size());
  T acc{};
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

template <typename T>
T squared_norm(std::span<const T> a) noexcept {
  return dot(a, a);
}

template <typename T>
T dot(std::span<T> a, std::span<T> b) noexcept {
  return dot(std::span<const T>(a), std::span<const T>(b));
}

template <typename T>
T squared_norm(std::span<T> a) noexcept {
  return dot(std::span<const T>(a), std::span<const T>(a));
}

/// a * b^T
template <typename T>
BasicMatrix<T> multiply_transposed(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "inner dimension");
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    auto oi = out.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) oi[j] = dot(ai, b.row(j));
  }
  return out;
}

/// a * b. Each output entry sums over the shared index in ascending order.
template <typename T>
BasicMatrix<T> multiply(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "inner dimension");
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    auto oi = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = ai[k];
      const auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

template <typename T>
std::pair<T, T> min_max(const BasicMatrix<T>& m) {
  if (m.empty()) throw Error(ErrorCode::EmptyInput, "min/max of empty matrix");
  const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
  return {*lo, *hi};
}

template <typename T>
bool all_finite(const BasicMatrix<T>& m) noexcept {
  return std::all_of(m.data().begin(), m.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace susx
