#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "slicegen/error.hpp"

namespace slicegen {

/// Single-channel image, row-major, intensities nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), pixels_(rows * cols, fill) {}
  Image(std::size_t rows, std::size_t cols, std::vector<float> pixels);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(std::size_t r, std::size_t c) { return pixels_[r * cols_ + c]; }
  float at(std::size_t r, std::size_t c) const { return pixels_[r * cols_ + c]; }

  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<float> pixels() noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> pixels_;
};

/// Boolean mask stored one byte per pixel (0 or 1).
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool at(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const noexcept;
  bool any() const noexcept { return count() > 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

Mask mask_and(const Mask& a, const Mask& b);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_not(const Mask& a);

/// Dice overlap 2|A∩B| / (|A| + |B|); 1 when both masks are empty.
double dice(const Mask& a, const Mask& b);

Image flip_horizontal(const Image& image);
Mask flip_horizontal(const Mask& mask);

/// Translates by (dy, dx) pixels, filling uncovered pixels with zero.
Image shift(const Image& image, int dy, int dx);

void require_same_size(const Image& a, const Image& b, const char* what);
void require_same_size(const Image& a, const Mask& b, const char* what);

}  // namespace slicegen
