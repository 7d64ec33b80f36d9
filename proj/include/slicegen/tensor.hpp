#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slicegen/error.hpp"

namespace slicegen {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Scalars use shape {1}.
///
/// Construction validates that every dimension is positive, that the value
/// count matches the shape and that all values are finite.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor();
  explicit Tensor(Shape shape, Real fill = Real{0});
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value) { return Tensor(Shape{1}, std::vector<Real>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const Real> values() const noexcept { return values_; }
  std::span<Real> values() noexcept { return values_; }
  const std::vector<Real>& storage() const noexcept { return values_; }

  Real operator[](std::size_t i) const { return values_[i]; }
  Real& operator[](std::size_t i) { return values_[i]; }

  /// Value of a one-element tensor.
  Real item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> values_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace slicegen
