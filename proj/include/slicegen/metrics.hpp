#pragma once

#include <array>

#include "slicegen/image.hpp"

namespace slicegen {

struct SsimConfig {
  int window = 11;      // Gaussian window side
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all fully contained window positions ("valid" windowing).
/// Throws DimensionError for mismatched shapes or images smaller than the window.
double ssim(const Image& x, const Image& y, const SsimConfig& config = {});

/// 10 log10(max^2 / MSE) in dB. Throws InfinitePsnrError when MSE is zero.
double psnr(const Image& x, const Image& y, double max_value = 1.0);

double mean_squared_error(const Image& x, const Image& y);
double mean_absolute_error(const Image& x, const Image& y);

}  // namespace slicegen
