#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/rng.hpp"

namespace attrmogen {

// Dense row-major tensor of doubles. All model math runs in double; the two
// file formats (corpus data, checkpoint blobs) store float32.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(compute_numel(shape_)), 0.0);
  }

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(compute_numel(shape_) == static_cast<int64_t>(data_.size()),
            ErrorClass::shape, "tensor data does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double std = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.normal(0.0, std);
    return t;
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), ErrorClass::shape, "from_rows needs at least one row");
    const int64_t cols = static_cast<int64_t>(rows[0].size());
    Tensor t({static_cast<int64_t>(rows.size()), cols});
    for (size_t i = 0; i < rows.size(); ++i) {
      require(static_cast<int64_t>(rows[i].size()) == cols, ErrorClass::shape,
              "ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), t.data_.begin() + i * cols);
    }
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  Tensor reshaped(std::vector<int64_t> shape) const {
    require(compute_numel(shape) == numel(), ErrorClass::shape,
            "reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static int64_t compute_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      require(d >= 0, ErrorClass::shape, "negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace attrmogen
