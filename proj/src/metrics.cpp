#include "slicegen/metrics.hpp"

#include <cmath>
#include <vector>

namespace slicegen {

namespace {

std::vector<double> gaussian_window(int side, double sigma) {
  std::vector<double> w(std::size_t(side) * std::size_t(side));
  const double centre = (side - 1) / 2.0;
  double total = 0.0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double dr = r - centre, dc = c - centre;
      const double v = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      w[std::size_t(r * side + c)] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(const Image& x, const Image& y, const SsimConfig& cfg) {
  require_same_size(x, y, "ssim");
  if (cfg.window < 1 || !(cfg.sigma > 0.0) || !(cfg.k1 > 0.0) || !(cfg.k2 > 0.0) ||
      !(cfg.dynamic_range > 0.0))
    throw ConfigError("ssim: invalid configuration");
  const std::size_t side = std::size_t(cfg.window);
  if (x.rows() < side || x.cols() < side)
    throw DimensionError("ssim: image smaller than the " + std::to_string(side) + "x" +
                         std::to_string(side) + " window");

  const auto w = gaussian_window(cfg.window, cfg.sigma);
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r0 = 0; r0 + side <= x.rows(); ++r0)
    for (std::size_t c0 = 0; c0 + side <= x.cols(); ++c0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          const double wv = w[r * side + c];
          const double a = x.at(r0 + r, c0 + c), b = y.at(r0 + r, c0 + c);
          mx += wv * a;
          my += wv * b;
          sxx += wv * a * a;
          syy += wv * b * b;
          sxy += wv * a * b;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / double(count);
}

double mean_squared_error(const Image& x, const Image& y) {
  require_same_size(x, y, "mean_squared_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x.pixels()[i]) - double(y.pixels()[i]);
    acc += d * d;
  }
  return acc / double(x.size());
}

double mean_absolute_error(const Image& x, const Image& y) {
  require_same_size(x, y, "mean_absolute_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    acc += std::fabs(double(x.pixels()[i]) - double(y.pixels()[i]));
  return acc / double(x.size());
}

double psnr(const Image& x, const Image& y, double max_value) {
  if (!(max_value > 0.0)) throw ConfigError("psnr: max_value must be positive");
  const double mse = mean_squared_error(x, y);
  if (mse == 0.0) throw InfinitePsnrError();
  return 10.0 * std::log10(max_value * max_value / mse);
}

}  // namespace slicegen
