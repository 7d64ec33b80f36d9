#include <doctest.h>

#include <cmath>

#include "slicegen/metrics.hpp"
#include "slicegen/phantom.hpp"
#include "slicegen/random.hpp"
#include "support.hpp"

using namespace slicegen;

namespace {

Image random_image(std::size_t n, Rng& rng) {
  Image im(n, n);
  for (float& p : im.pixels()) p = static_cast<float>(uniform01(rng));
  return im;
}

// Straight transcription of the windowed SSIM definition, one window at a time.
double ssim_oracle(const Image& x, const Image& y) {
  const int side = 11;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double w[side][side], total = 0;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) total += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
  double acc = 0;
  int count = 0;
  for (std::size_t r = 0; r + side <= x.rows(); ++r)
    for (std::size_t c = 0; c + side <= x.cols(); ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          mx += w[i][j] / total * x.at(r + i, c + j);
          my += w[i][j] / total * y.at(r + i, c + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          const double dx = x.at(r + i, c + j) - mx, dy = y.at(r + i, c + j) - my;
          vx += w[i][j] / total * dx * dx;
          vy += w[i][j] / total * dy * dy;
          cxy += w[i][j] / total * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST_CASE("ssim identity, symmetry and bounds") {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const Image a = random_image(16, rng), b = random_image(16, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(ssim(a, b) - ssim(b, a)) <= 1e-12);
    CHECK(std::fabs(ssim(a, b)) <= 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("ssim of constant images has the closed form C1 / (1 + C1)") {
  const double c1 = 1e-4;
  CHECK(std::fabs(ssim(Image(12, 12, 0.0f), Image(12, 12, 1.0f)) - c1 / (1 + c1)) <= 1e-9);
}

TEST_CASE("ssim rejects bad shapes") {
  CHECK_THROWS_AS(ssim(Image(10, 10), Image(10, 10)), DimensionError);
  CHECK_THROWS_AS(ssim(Image(12, 12), Image(12, 13)), DimensionError);
}

TEST_CASE("psnr arithmetic") {
  // Every pixel off by 0.1 gives MSE 0.01.
  CHECK(psnr(Image(4, 4, 0.2f), Image(4, 4, 0.3f)) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(Image(4, 4, 0.0f), Image(4, 4, 1.0f)) == 0.0);
  CHECK_THROWS_AS(psnr(Image(4, 4, 0.5f), Image(4, 4, 0.5f)), InfinitePsnrError);
  CHECK_THROWS_AS(psnr(Image(4, 4), Image(4, 5)), DimensionError);
}

TEST_CASE("psnr decreases as the error grows") {
  const Image ref(8, 8, 0.25f);
  double prev = INFINITY;
  for (float d : {0.01f, 0.02f, 0.05f, 0.1f, 0.3f}) {
    const double v = psnr(ref, Image(8, 8, 0.25f + d));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("metrics are invariant to a joint horizontal flip") {
  const Image a = render_slice(make_profile(1, 3), 0.2).image, b = render_slice(make_profile(1, 3), 0.5).image;
  CHECK(ssim(a, b) == doctest::Approx(ssim(flip_horizontal(a), flip_horizontal(b))).epsilon(1e-9));
  CHECK(psnr(a, b) == doctest::Approx(psnr(flip_horizontal(a), flip_horizontal(b))).epsilon(1e-12));
}
