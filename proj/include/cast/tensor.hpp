#pragma once

#include "cast/common.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace cast {

// Dense row-major tensor. Rank 1 and 2 cover everything in this project;
// attention maps are stored as collections of matrices.
template <class Real>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    data_.assign(n, fill);
  }

  static Tensor matrix(std::size_t r, std::size_t c, Real fill = Real(0)) {
    return Tensor({r, c}, fill);
  }
  static Tensor vec(std::size_t n, Real fill = Real(0)) { return Tensor({n}, fill); }
  static Tensor scalar(Real v) { return Tensor({std::size_t(1), std::size_t(1)}, v); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require(rank() == 2, "Tensor::rows: expected rank-2, got ", shape_str());
    return shape_[0];
  }
  std::size_t cols() const {
    require(rank() == 2, "Tensor::cols: expected rank-2, got ", shape_str());
    return shape_[1];
  }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Real* row(std::size_t i) { return data_.data() + i * shape_[1]; }
  const Real* row(std::size_t i) const { return data_.data() + i * shape_[1]; }

  void zero() { std::fill(data_.begin(), data_.end(), Real(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

} // namespace cast
