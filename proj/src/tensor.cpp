#include "slicegen/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace slicegen {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
    throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
}

}  // namespace

template <typename Real>
Tensor<Real>::Tensor() : shape_{1}, values_(1, Real{0}) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  if (!std::isfinite(fill)) throw DomainError("tensor fill value must be finite");
  values_.assign(shape_size(shape_), fill);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (shape_size(shape_) != values_.size())
    throw DimensionError("shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  if (!all_finite()) throw DomainError("tensor values must be finite");
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  return shape_[axis];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (values_.size() != 1)
    throw DimensionError("item() needs a one-element tensor, got " + shape_string(shape_));
  return values_[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != values_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

template <typename Real>
bool Tensor<Real>::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace slicegen
