#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crnn/errors.hpp"

namespace crnn {

/// Dense row-major matrix. Vectors are 1 x n rows; a batch of vectors is a
/// batch x n matrix.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, T{1}); }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }
  static Matrix row_vector(std::vector<T> v) {
    const std::size_t n = v.size();
    return Matrix(1, n, std::move(v));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace detail {

template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

inline bool is_scalar_shape(std::size_t r, std::size_t c) { return r == 1 && c == 1; }

template <class T>
T stable_sigmoid(T x) {
  if (x >= T{0}) {
    const T z = std::exp(-x);
    return T{1} / (T{1} + z);
  }
  const T z = std::exp(x);
  return z / (T{1} + z);
}

// out += a * b, all row-major, a is m x n, b is n x p.
template <class T>
void gemm_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* out_row = out + i * p;
    const T* a_row = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = a_row[k];
      if (aik == T{0}) continue;
      const T* b_row = b + k * p;
      for (std::size_t j = 0; j < p; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

// out += a^T * b, a is n x m, b is n x p, out is m x p.
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* out, std::size_t n, std::size_t m, std::size_t p) {
  for (std::size_t k = 0; k < n; ++k) {
    const T* a_row = a + k * m;
    const T* b_row = b + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T aki = a_row[i];
      if (aki == T{0}) continue;
      T* out_row = out + i * p;
      for (std::size_t j = 0; j < p; ++j) out_row[j] += aki * b_row[j];
    }
  }
}

}  // namespace detail

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " +
                         b.shape_string());
  Matrix<T> out(a.rows(), b.cols());
  detail::gemm_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

/// a * b^T.
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                         b.shape_string());
  const Matrix<T> bt = transpose(b);
  Matrix<T> out(a.rows(), b.rows());
  detail::gemm_acc(a.data(), bt.data(), out.data(), a.rows(), a.cols(), bt.cols());
  return out;
}

/// a^T * b.
template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                         b.shape_string());
  Matrix<T> out(a.cols(), b.cols());
  detail::gemm_tn_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

namespace detail {

// Applies f elementwise; a 1x1 operand broadcasts against the other.
template <class T, class F>
Matrix<T> zip(const Matrix<T>& a, const Matrix<T>& b, const char* op, F f) {
  if (is_scalar_shape(a.rows(), a.cols()) && !is_scalar_shape(b.rows(), b.cols())) {
    Matrix<T> out(b.rows(), b.cols());
    const T s = a(0, 0);
    for (std::size_t i = 0; i < b.size(); ++i) out.data()[i] = f(s, b.data()[i]);
    return out;
  }
  if (is_scalar_shape(b.rows(), b.cols()) && !is_scalar_shape(a.rows(), a.cols())) {
    Matrix<T> out(a.rows(), a.cols());
    const T s = b(0, 0);
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], s);
    return out;
  }
  require_same_shape(a, b, op);
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], b.data()[i]);
  return out;
}

template <class T, class F>
Matrix<T> map(const Matrix<T>& a, F f) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  return out;
}

}  // namespace detail

template <class T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  return detail::zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <class T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
  return detail::zip(a, b, "sub", [](T x, T y) { return x - y; });
}

/// Hadamard product.
template <class T>
Matrix<T> mul(const Matrix<T>& a, const Matrix<T>& b) {
  return detail::zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <class T>
Matrix<T> scale(const Matrix<T>& a, T s) {
  return detail::map(a, [s](T x) { return x * s; });
}

template <class T>
Matrix<T> one_minus(const Matrix<T>& a) {
  return detail::map(a, [](T x) { return T{1} - x; });
}

template <class T>
Matrix<T> sigmoid(const Matrix<T>& a) {
  return detail::map(a, [](T x) { return detail::stable_sigmoid(x); });
}

template <class T>
Matrix<T> tanh(const Matrix<T>& a) {
  return detail::map(a, [](T x) { return std::tanh(x); });
}

/// Adds a 1 x n row to every row of a.
template <class T>
Matrix<T> add_row(const Matrix<T>& a, const Matrix<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw DimensionError("add_row: bias " + bias.shape_string() + " does not fit " +
                         a.shape_string());
  Matrix<T> out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) dst[c] += bias(0, c);
  }
  return out;
}

/// [a, b] side by side.
template <class T>
Matrix<T> concat_cols(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols());
  }
  return out;
}

/// Row ids[i] of m as row i of the result.
template <class T>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const std::size_t> ids) {
  Matrix<T> out(ids.size(), m.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= m.rows())
      throw DimensionError("gather_rows: row " + std::to_string(ids[i]) + " outside " +
                           m.shape_string());
    std::copy(m.row(ids[i]).begin(), m.row(ids[i]).end(), out.row(i).begin());
  }
  return out;
}

/// First n rows of m.
template <class T>
Matrix<T> top_rows(const Matrix<T>& m, std::size_t n) {
  if (n > m.rows())
    throw DimensionError("top_rows: " + std::to_string(n) + " rows of " + m.shape_string());
  Matrix<T> out(n, m.cols());
  std::copy(m.data(), m.data() + n * m.cols(), out.data());
  return out;
}

/// Sparse one-hot product: row i of the result is the sum of rows
/// ids[i*per_row .. (i+1)*per_row) of m. Equals one_hot(ids) * m.
template <class T>
Matrix<T> sum_rows_at(const Matrix<T>& m, std::span<const std::size_t> ids, std::size_t per_row) {
  if (per_row == 0 || ids.size() % per_row != 0)
    throw DimensionError("sum_rows_at: index count " + std::to_string(ids.size()) +
                         " not a multiple of " + std::to_string(per_row));
  const std::size_t n = ids.size() / per_row;
  Matrix<T> out(n, m.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t id = ids[i * per_row + j];
      if (id >= m.rows())
        throw DimensionError("sum_rows_at: row " + std::to_string(id) + " outside " +
                             m.shape_string());
      auto src = m.row(id);
      for (std::size_t c = 0; c < m.cols(); ++c) dst[c] += src[c];
    }
  }
  return out;
}

/// Dense 0/1 materialization of per-row active indices.
template <class T>
Matrix<T> one_hot_rows(std::span<const std::size_t> ids, std::size_t per_row, std::size_t dim) {
  if (per_row == 0 || ids.size() % per_row != 0)
    throw DimensionError("one_hot_rows: index count not a multiple of active count");
  const std::size_t n = ids.size() / per_row;
  Matrix<T> out(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t id = ids[i * per_row + j];
      if (id >= dim)
        throw DimensionError("one_hot_rows: index " + std::to_string(id) + " outside width " +
                             std::to_string(dim));
      out(i, id) = T{1};
    }
  return out;
}

template <class T>
T sum(const Matrix<T>& a) {
  T s{0};
  for (T v : a.values()) s += v;
  return s;
}

/// Softmax of each row, with max subtraction.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  if (!logits.all_finite()) throw NumericError("softmax: non-finite logits");
  Matrix<T> out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto dst = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T total{0};
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    for (T& v : dst) v /= total;
  }
  return out;
}

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  Matrix<T> m(1, logits.size(), std::vector<T>(logits.begin(), logits.end()));
  auto p = softmax_rows(m);
  return {p.values().begin(), p.values().end()};
}

/// log-sum-exp of each row.
template <class T>
std::vector<T> logsumexp_rows(const Matrix<T>& logits) {
  std::vector<T> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T total{0};
    for (T v : in) total += std::exp(v - mx);
    out[r] = mx + std::log(total);
  }
  return out;
}

/// Sum over rows with mask[r] != 0 of -log softmax(logits[r])[targets[r]].
template <class T>
T masked_nll(const Matrix<T>& logits, std::span<const std::size_t> targets,
             std::span<const T> mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows())
    throw DimensionError("masked_nll: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for logits " +
                         logits.shape_string());
  if (!logits.all_finite()) throw NumericError("masked_nll: non-finite logits");
  const auto lse = logsumexp_rows(logits);
  T total{0};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (mask[r] == T{0}) continue;
    if (targets[r] >= logits.cols())
      throw DimensionError("masked_nll: target " + std::to_string(targets[r]) +
                           " outside vocabulary of " + std::to_string(logits.cols()));
    total += mask[r] * (lse[r] - logits(r, targets[r]));
  }
  return total;
}

template <class To, class From>
Matrix<To> cast(const Matrix<From>& m) {
  std::vector<To> data(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) data[i] = static_cast<To>(m.data()[i]);
  return Matrix<To>(m.rows(), m.cols(), std::move(data));
}

template <class T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace crnn
