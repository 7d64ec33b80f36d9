#include "slicegen/image.hpp"

#include <algorithm>
#include <string>

namespace slicegen {

Image::Image(std::size_t rows, std::size_t cols, std::vector<float> pixels)
    : rows_(rows), cols_(cols), pixels_(std::move(pixels)) {
  if (pixels_.size() != rows * cols)
    throw DimensionError("image " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                         std::to_string(rows * cols) + " pixels, got " +
                         std::to_string(pixels_.size()));
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

namespace {

void require_same_mask_size(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("mask size mismatch");
}

template <typename Op>
Mask combine(const Mask& a, const Mask& b, Op op) {
  require_same_mask_size(a, b);
  Mask out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, op(a[i], b[i]));
  return out;
}

}  // namespace

Mask mask_and(const Mask& a, const Mask& b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}

Mask mask_or(const Mask& a, const Mask& b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}

Mask mask_not(const Mask& a) {
  Mask out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, !a[i]);
  return out;
}

double dice(const Mask& a, const Mask& b) {
  require_same_mask_size(a, b);
  const std::size_t na = a.count(), nb = b.count();
  if (na + nb == 0) return 1.0;
  return 2.0 * double(mask_and(a, b).count()) / double(na + nb);
}

Image flip_horizontal(const Image& image) {
  Image out(image.rows(), image.cols());
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c) out.at(r, c) = image.at(r, image.cols() - 1 - c);
  return out;
}

Mask flip_horizontal(const Mask& mask) {
  Mask out(mask.rows(), mask.cols());
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c) out.set(r, c, mask.at(r, mask.cols() - 1 - c));
  return out;
}

Image shift(const Image& image, int dy, int dx) {
  Image out(image.rows(), image.cols());
  const long rows = long(image.rows()), cols = long(image.cols());
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      const long sr = r - dy, sc = c - dx;
      if (sr >= 0 && sr < rows && sc >= 0 && sc < cols)
        out.at(std::size_t(r), std::size_t(c)) = image.at(std::size_t(sr), std::size_t(sc));
    }
  return out;
}

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": image sizes differ");
}

void require_same_size(const Image& a, const Mask& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": mask size differs from image");
}

}  // namespace slicegen
