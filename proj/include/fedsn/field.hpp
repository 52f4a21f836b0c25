#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedsn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major array with an optional gradient buffer.
///
/// Spatial fields are laid out as (batch, channels, d1..dD) with D in {2,3};
/// the last axis is contiguous. Small utility fields (path logits, scalars)
/// use rank-1 shapes and have no spatial interpretation.
template <std::floating_point T>
class Field {
 public:
  using value_type = T;

  Field() = default;

  explicit Field(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_volume(shape_), fill) {}

  Field(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_volume(shape_)) {
      throw std::invalid_argument("Field: shape " + shape_string(shape_) + " needs " +
                                  std::to_string(shape_volume(shape_)) + " values, got " +
                                  std::to_string(values_.size()));
    }
  }

  static Field scalar(T v) { return Field(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// Number of spatial axes, or 0 for non-spatial fields.
  std::size_t spatial_rank() const noexcept { return shape_.size() >= 3 ? shape_.size() - 2 : 0; }
  std::size_t batch() const { return shape_.at(0); }
  std::size_t channels() const { return shape_.at(1); }
  std::size_t spatial(std::size_t axis) const { return shape_.at(2 + axis); }
  Shape spatial_shape() const {
    return shape_.size() >= 3 ? Shape(shape_.begin() + 2, shape_.end()) : Shape{};
  }
  /// Voxels per (batch, channel) plane.
  std::size_t plane_size() const {
    std::size_t n = 1;
    for (std::size_t i = 2; i < shape_.size(); ++i) n *= shape_[i];
    return n;
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  Field& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<T> ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), T{0});
    return grad_;
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }
  void clear_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  /// Same shape and values; gradient state is not compared.
  bool same_values(const Field& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

}  // namespace fedsn
