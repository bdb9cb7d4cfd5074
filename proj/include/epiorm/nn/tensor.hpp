#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "epiorm/errors.hpp"

namespace epiorm::nn {

using Shape = std::vector<int>;

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

// Dense row-major tensor of rank 1..4. Activations use (N, H, W, C).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(element_count(shape_), fill);
  }
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape();
    if (data_.size() != element_count(shape_))
      throw ShapeError("tensor of shape " + nn::to_string(shape_) + " given " + std::to_string(data_.size()) +
                       " values");
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int h, int w, int c) { return data_[offset(n, h, w, c)]; }
  T at(int n, int h, int w, int c) const { return data_[offset(n, h, w, c)]; }
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  T at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  std::size_t offset(int n, int h, int w, int c) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape s) const {
    if (element_count(s) != size())
      throw ShapeError("cannot reshape " + nn::to_string(shape_) + " to " + nn::to_string(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  Tensor& operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw ShapeError("shape mismatch in +=: " + nn::to_string(shape_) + " vs " + nn::to_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4");
    for (int d : shape_)
      if (d < 1) throw ShapeError("tensor extents must be positive: " + nn::to_string(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace epiorm::nn
