#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "promalign/errors.hpp"

namespace promalign {

// Dense row-major matrix of doubles. Vectors are 1 x n or n x 1.
class Tensor {
 public:
  Tensor() : rows_(0), cols_(0) {}
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != t.cols_) throw InternalError("Tensor::from_rows: ragged rows");
      std::size_t c = 0;
      for (double v : row) t.at(r, c++) = v;
      ++r;
    }
    return t;
  }

  static Tensor row_vector(const std::vector<double>& v) {
    Tensor t(1, v.size());
    t.data_ = v;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool all_zero() const {
    for (double v : data_)
      if (v != 0.0) return false;
    return true;
  }

  // Scalar convenience for 1x1 tensors.
  double scalar() const {
    if (rows_ != 1 || cols_ != 1) throw InternalError("Tensor::scalar on non-1x1 tensor");
    return data_[0];
  }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

}  // namespace promalign
