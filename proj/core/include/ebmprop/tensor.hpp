#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebmprop {

// Dense row-major array of doubles, rank 1 (vector) or rank 2 (matrix).
// Higher-rank data (batch x samples x dim) is stored flattened as
// (batch*samples) x dim with the grouping tracked by the caller.
class Tensor {
 public:
  Tensor() = default;

  static Tensor vector(int n, double fill = 0.0) {
    Tensor t;
    t.rows_ = n;
    t.cols_ = 1;
    t.rank_ = 1;
    t.data_.assign(static_cast<size_t>(n), fill);
    return t;
  }

  static Tensor matrix(int rows, int cols, double fill = 0.0) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.rank_ = 2;
    t.data_.assign(static_cast<size_t>(rows) * cols, fill);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t = vector(1);
    t.data_[0] = v;
    return t;
  }

  static Tensor from(std::vector<double> v) {
    Tensor t;
    t.rows_ = static_cast<int>(v.size());
    t.cols_ = 1;
    t.rank_ = 1;
    t.data_ = std::move(v);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int rank() const { return rank_; }
  int64_t numel() const { return static_cast<int64_t>(rows_) * cols_; }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && rank_ == o.rank_;
  }

  std::string shape_str() const {
    if (rank_ == 1) return "[" + std::to_string(rows_) + "]";
    return "[" + std::to_string(rows_) + "," + std::to_string(cols_) + "]";
  }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return {data_.data(), data_.size()}; }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }
  const std::vector<double>& vec() const { return data_; }

  double item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item: numel != 1, shape " + shape_str());
    return data_[0];
  }

  // Same data, new shape. numel must match.
  Tensor reshaped(int rows, int cols, int rank) const {
    if (static_cast<int64_t>(rows) * cols != numel())
      throw std::invalid_argument("Tensor::reshaped: numel mismatch");
    Tensor t = *this;
    t.rows_ = rows;
    t.cols_ = cols;
    t.rank_ = rank;
    return t;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

 private:
  int rows_ = 0;
  int cols_ = 1;
  int rank_ = 1;
  std::vector<double> data_;
};

}  // namespace ebmprop
