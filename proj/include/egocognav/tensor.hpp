#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "egocognav/errors.hpp"

namespace egocognav {

// Dense row-major tensor of doubles. Compute-graph ops treat rank-1 tensors
// as row vectors and a single element as a scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    size_t n = 1;
    for (size_t d : shape_) {
      if (d == 0) throw ShapeMismatch("tensor dimension must be positive");
      n *= d;
    }
    data_.assign(n, 0.0);
  }

  Tensor(std::vector<size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    size_t n = 1;
    for (size_t d : shape_) n *= d;
    if (n != data_.size()) {
      throw ShapeMismatch("tensor data length does not match shape");
    }
  }

  static Tensor zeros(size_t rows, size_t cols) {
    return Tensor({rows, cols});
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor row(std::initializer_list<double> values) {
    Tensor t({1, values.size()});
    size_t i = 0;
    for (double v : values) t.data_[i++] = v;
    return t;
  }

  static Tensor full(std::vector<size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }

  // Matrix view: rank-2 as is, rank-1 as a 1 x n row, rank-0 not allowed.
  size_t rows() const {
    if (shape_.size() >= 2) return shape_[0];
    return 1;
  }
  size_t cols() const {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() == 2) return shape_[1];
    size_t c = 1;
    for (size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
  }

  bool is_scalar() const { return data_.size() == 1; }
  double scalar_value() const {
    if (!is_scalar()) throw NotScalar("tensor has " + std::to_string(size()) + " elements");
    return data_[0];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Tensor reshaped(std::vector<size_t> shape) const {
    Tensor t(std::move(shape), data_);
    return t;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

// C += A * B for row-major matrices, i-k-j order so the inner loop streams
// over contiguous rows of B and C. This kernel carries nearly all training
// cost; keep it allocation free.
inline void matmul_accumulate(const double* a, const double* b, double* c,
                              size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B where A is (k x m): used by backward passes.
inline void matmul_at_b_accumulate(const double* a, const double* b, double* c,
                                   size_t k, size_t m, size_t n) {
  for (size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T where B is (n x k): used by backward passes.
inline void matmul_a_bt_accumulate(const double* a, const double* b, double* c,
                                   size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

}  // namespace egocognav
