#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/error.hpp"

namespace dgtr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. Rank-1 tensors behave as a single row wherever a
/// matrix is expected.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<Real> values) {
    return Tensor({rows, cols}, std::vector<Real>(values));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() == 2) return shape_[0];
    throw ShapeError("rows() on tensor of shape " + shape_str(shape_));
  }
  std::size_t cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() == 2) return shape_[1];
    throw ShapeError("cols() on tensor of shape " + shape_str(shape_));
  }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> span() noexcept { return data_; }
  std::span<const Real> span() const noexcept { return data_; }
  std::vector<Real>& values() noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace dgtr
