#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "restok/real.hpp"

RESTOK_BEGIN_NAMESPACE

// Dense row-major tensor. Token sequences are rank 2 ([tokens x channels]),
// image grids rank 3 ([rows x cols x channels]), bias vectors rank 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Real fill = Real(0));
  Tensor(std::vector<int> shape, std::vector<Real> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 views; a rank-1 tensor is treated as a single row.
  int rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() != 2) bad_rank("rows()");
    return shape_[0];
  }
  int cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() != 2) bad_rank("cols()");
    return shape_[1];
  }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  Real at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  Real item() const;

  Tensor reshaped(std::vector<int> shape) const;
  Tensor& operator+=(const Tensor& other);
  void fill(Real v);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  [[noreturn]] void bad_rank(const char* what) const;

  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

// Throws DimensionError with a readable message when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_rank(const Tensor& t, int rank, const char* op);

bool bit_identical(const Tensor& a, const Tensor& b);
Real max_abs_diff(const Tensor& a, const Tensor& b);

RESTOK_END_NAMESPACE
