#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "atv/rng.hpp"

namespace atv {

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace detail

// Dense shape, rank 1..4. Canonical layouts: (N,C,H,W) for activations,
// (O,I,Kh,Kw) for convolution weights, (C) for per-channel vectors.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t operator[](int i) const { return dims_.at(static_cast<size_t>(i)); }
  const std::vector<int64_t>& dims() const { return dims_; }

  int64_t elements() const {
    int64_t n = 1;
    for (int64_t d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ")";
    return os.str();
  }

 private:
  void validate() const {
    detail::require(!dims_.empty() && dims_.size() <= 4, "shape rank must be 1..4");
    int64_t n = 1;
    for (int64_t d : dims_) {
      detail::require(d >= 1, "shape extents must be >= 1, got " + str());
      detail::require(d <= std::numeric_limits<int64_t>::max() / n,
                      "shape element count overflows");
      n *= d;
    }
  }

  std::vector<int64_t> dims_;
};

// Contiguous row-major tensor. Value semantics throughout: operations take
// const refs and return fresh tensors, so sharing across threads is safe.
template <typename T>
class Tensor {
  static_assert(std::is_arithmetic_v<T>, "Tensor requires an arithmetic element type");

 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(static_cast<size_t>(shape_.elements()), T(0)) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    detail::require(static_cast<int64_t>(data_.size()) == shape_.elements(),
                    "buffer length does not match shape " + shape_.str());
  }

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  int64_t dim(int i) const { return shape_[i]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // rank-4 accessors
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[static_cast<size_t>(offset(n, c, h, w))]; }
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[static_cast<size_t>(offset(n, c, h, w))]; }

  int64_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// NaN/Inf anywhere is a contract violation; every producing operation calls
// this on its result before returning.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* where) {
  if constexpr (std::is_floating_point_v<T>) {
    const T* p = t.data();
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i])) {
        throw std::runtime_error(std::string("non-finite value produced by ") + where);
      }
    }
  }
}

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(std::move(shape));
}

template <typename T>
Tensor<T> constant(Shape shape, T value) {
  detail::require(std::isfinite(static_cast<double>(value)), "constant fill must be finite");
  Tensor<T> t(std::move(shape));
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, T lo, T hi, uint64_t seed) {
  detail::require(lo <= hi, "uniform: lo must be <= hi");
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  ensure_finite(t, "uniform");
  return t;
}

template <typename T>
Tensor<T> normal(Shape shape, T mean, T stddev, uint64_t seed) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(mean, stddev));
  ensure_finite(t, "normal");
  return t;
}

}  // namespace atv
