#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cgpo/errors.hpp"

namespace cgpo {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

using Shape = std::vector<std::size_t>;

// Aligned storage keeps Eigen's vectorized loops on the same code path for
// every allocation, so results do not depend on where the heap puts a buffer.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Rank 2 is the working rank: a batch of B rows with F features is a
/// `{B, F}` tensor. Rank-1 tensors are treated as a single row by `rows()`
/// and `cols()`, which keeps bias vectors and single actions interchangeable
/// with one-row batches.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(const std::vector<double>& v) {
    const auto n = v.size();
    return Tensor({n}, v);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<double>& data) {
    return Tensor({rows, cols}, data);
  }
  /// One-row matrix holding `v`.
  static Tensor row(std::span<const double> v) {
    return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    if (shape_.size() == 2) return shape_[0];
    return shape_.empty() ? 0 : 1;
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    return shape_.empty() ? 0 : shape_[0];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double> storage() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  double item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
  }

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

/// Rows of `a` followed by the columns of `b`, side by side.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row counts " + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()));
  }
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row_span(r);
    std::copy_n(a.row_span(r).begin(), a.cols(), dst.begin());
    std::copy_n(b.row_span(r).begin(), b.cols(), dst.begin() + a.cols());
  }
  return out;
}

/// Each row of `t` repeated `times` times consecutively.
inline Tensor repeat_rows(const Tensor& t, std::size_t times) {
  Tensor out = Tensor::matrix(t.rows() * times, t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy_n(t.row_span(r).begin(), t.cols(), out.row_span(r * times + k).begin());
    }
  }
  return out;
}

inline Tensor select_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Tensor out = Tensor::matrix(idx.size(), t.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(t.row_span(idx[i]).begin(), t.cols(), out.row_span(i).begin());
  }
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

}  // namespace cgpo
