#include "slicegen/slice_select.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

#include "slicegen/model.hpp"
#include "slicegen/random.hpp"

namespace slicegen {

std::size_t intensity_bin(double value, std::size_t bins) {
  if (!std::isfinite(value)) throw DomainError("intensity_bin: non-finite intensity");
  const double b = std::floor(std::clamp(value, 0.0, 1.0) * double(bins));
  return std::min(bins - 1, static_cast<std::size_t>(b));
}

JointHistogram::JointHistogram(const Image& a, const Image& b, std::size_t bins)
    : bins_(bins), counts_(bins * bins, 0.0) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
  require_same_size(a, b, "joint histogram");
  if (a.empty()) throw DimensionError("joint histogram of empty images");
  for (std::size_t i = 0; i < a.size(); ++i)
    counts_[intensity_bin(a.pixels()[i], bins) * bins + intensity_bin(b.pixels()[i], bins)] += 1.0;
  total_ = double(a.size());
}

JointHistogram::JointHistogram(std::size_t bins, std::vector<double> counts)
    : bins_(bins), counts_(std::move(counts)) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
  if (counts_.size() != bins * bins) throw DimensionError("histogram table must be B x B");
  for (double c : counts_)
    if (!(c >= 0.0) || !std::isfinite(c)) throw DomainError("histogram counts must be finite and >= 0");
  total_ = std::accumulate(counts_.begin(), counts_.end(), 0.0);
  if (!(total_ > 0.0)) throw DomainError("histogram is empty");
}

std::vector<double> JointHistogram::row_marginal() const {
  std::vector<double> m(bins_, 0.0);
  for (std::size_t i = 0; i < bins_; ++i)
    for (std::size_t j = 0; j < bins_; ++j) m[i] += count(i, j);
  return m;
}

std::vector<double> JointHistogram::col_marginal() const {
  std::vector<double> m(bins_, 0.0);
  for (std::size_t i = 0; i < bins_; ++i)
    for (std::size_t j = 0; j < bins_; ++j) m[j] += count(i, j);
  return m;
}

double JointHistogram::mutual_information() const {
  const auto px = row_marginal(), py = col_marginal();
  double mi = 0.0;
  for (std::size_t i = 0; i < bins_; ++i)
    for (std::size_t j = 0; j < bins_; ++j) {
      const double c = count(i, j);
      if (c == 0.0) continue;
      // p(x,y) / (p(x) p(y)) = c * total / (row * col)
      mi += (c / total_) * std::log(c * total_ / (px[i] * py[j]));
    }
  return std::max(mi, 0.0);
}

double mutual_information(const Image& a, const Image& b, std::size_t bins) {
  return JointHistogram(a, b, bins).mutual_information();
}

double histogram_entropy(const Image& a, std::size_t bins) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
  if (a.empty()) throw DimensionError("entropy of an empty image");
  std::vector<double> counts(bins, 0.0);
  for (float v : a.pixels()) counts[intensity_bin(v, bins)] += 1.0;
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) {
      const double p = c / double(a.size());
      h -= p * std::log(p);
    }
  return h;
}

namespace {

struct Box {
  double r0, r1, c0, c1;  // half-open pixel extents
  bool operator==(const Box&) const = default;
};

std::optional<Box> body_box(const Image& im, float level) {
  std::size_t r0 = im.rows(), r1 = 0, c0 = im.cols(), c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < im.rows(); ++r)
    for (std::size_t c = 0; c < im.cols(); ++c)
      if (im.at(r, c) > level) {
        any = true;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (!any) return std::nullopt;
  return Box{double(r0), double(r1 + 1), double(c0), double(c1 + 1)};
}

// (y, x) in pixel-index coordinates; zero outside the image.
double bilinear(const Image& im, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double wy = y - fy, wx = x - fx;
  const long r = long(fy), c = long(fx);
  auto px = [&](long rr, long cc) -> double {
    if (rr < 0 || cc < 0 || rr >= long(im.rows()) || cc >= long(im.cols())) return 0.0;
    return im.at(std::size_t(rr), std::size_t(cc));
  };
  return (1 - wy) * ((1 - wx) * px(r, c) + wx * px(r, c + 1)) + wy * ((1 - wx) * px(r + 1, c) + wx * px(r + 1, c + 1));
}

}  // namespace

Image register_to_reference(const Image& moving, const Image& reference, float body_level) {
  const auto bm = body_box(moving, body_level), br = body_box(reference, body_level);
  if (!bm || !br || (*bm == *br && moving.rows() == reference.rows() && moving.cols() == reference.cols()))
    return moving;
  const double sy = (bm->r1 - bm->r0) / (br->r1 - br->r0), sx = (bm->c1 - bm->c0) / (br->c1 - br->c0);
  Image out(reference.rows(), reference.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const double y = bm->r0 + (double(r) + 0.5 - br->r0) * sy - 0.5;
      const double x = bm->c0 + (double(c) + 0.5 - br->c0) * sx - 0.5;
      out.at(r, c) = static_cast<float>(std::clamp(bilinear(moving, y, x), 0.0, 1.0));
    }
  return out;
}

double registered_mutual_information(const Image& candidate, const Image& reference, std::size_t bins) {
  return mutual_information(register_to_reference(candidate, reference), reference, bins);
}

std::size_t select_target_mi(std::span<const Image> candidates, const Image& reference, std::size_t bins) {
  if (candidates.empty()) throw ContractError("select_target_mi: no candidates");
  std::size_t best = 0;
  double best_mi = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double mi = registered_mutual_information(candidates[i], reference, bins);
    if (mi > best_mi) {
      best_mi = mi;
      best = i;
    }
  }
  return best;
}

namespace {

constexpr std::uint64_t kRegressorInit = 0x72656769;  // "regi"
constexpr std::uint64_t kRegressorShuffle = 0x72736866;

Tensor<float> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<float> v(shape_size(shape));
  for (float& x : v) x = static_cast<float>(dist(rng));
  return Tensor<float>(std::move(shape), std::move(v));
}

}  // namespace

LevelRegressor::LevelRegressor(RegressorConfig config) : config_(config) {
  if (config_.image_size < 8 || config_.image_size % 8 != 0)
    throw ConfigError("regressor image_size must be a positive multiple of 8");
  if (config_.channels < 1 || config_.batch_size < 1 || config_.epochs < 0 || !(config_.lr > 0.0))
    throw ConfigError("invalid level regressor configuration");
  Rng rng(derive_seed(config_.seed, {kRegressorInit}));
  std::size_t cin = 1, c = config_.channels;
  for (int i = 1; i <= 3; ++i) {
    const std::string layer = "conv" + std::to_string(i);
    params_.add(layer + ".weight", he_normal({c, cin, 4, 4}, cin * 16, rng));
    params_.add(layer + ".bias", Tensor<float>({c}));
    cin = c;
    c *= 2;
  }
  const std::size_t s = config_.image_size / 8, features = cin * s * s;
  params_.add("fc.weight", he_normal({features, 1}, 2 * features, rng));
  params_.add("fc.bias", Tensor<float>({1}));
}

Var<float> LevelRegressor::forward(const Var<float>& images) const {
  Var<float> h = images;
  for (int i = 1; i <= 3; ++i) {
    const std::string layer = "conv" + std::to_string(i);
    h = leaky_relu(bias_add(conv2d(h, params_.at(layer + ".weight"), 2, 1), params_.at(layer + ".bias")), 0.2);
  }
  h = reshape(h, {images.shape()[0], h.size() / images.shape()[0]});
  // Linear head: a sigmoid flattens the loss exactly where levels 0 and 1 sit.
  // predict() clamps to [0, 1].
  return bias_add(matmul(h, params_.at("fc.weight")), params_.at("fc.bias"));
}

std::vector<double> LevelRegressor::fit(std::span<const Image> images, std::span<const double> levels) {
  if (images.empty()) throw ContractError("level regressor needs a nonempty dataset");
  if (images.size() != levels.size()) throw DimensionError("level regressor: image and level counts differ");
  for (double v : levels)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("training levels must lie in [0, 1]");
  for (const Image& im : images)
    if (im.rows() != config_.image_size || im.cols() != config_.image_size)
      throw DimensionError("level regressor: image size does not match the configuration");

  Adam<float> opt(params_.items(), AdamConfig{config_.lr, 0.0, 0.9, 0.999, 1e-8});
  std::vector<double> history;
  std::vector<std::size_t> order(images.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    // Cosine decay; the final epochs settle instead of jittering around the fit.
    opt.set_lr(config_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(config_.epochs))));
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config_.seed, {kRegressorShuffle, std::uint64_t(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config_.batch_size);
      std::vector<const Image*> batch;
      std::vector<float> y;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(&images[order[i]]);
        y.push_back(static_cast<float>(levels[order[i]]));
      }
      Tape<float> tape;
      opt.zero_grad();
      Var<float> loss;
      {
        TapeScope<float> scope(tape);
        const Var<float> pred = forward(Var<float>::constant(images_to_tensor<float>(batch)));
        loss = mean(square(sub(pred, Var<float>::constant(Tensor<float>({y.size(), 1}, y)))));
      }
      tape.backward(loss);
      opt.step();
      total += double(loss.item()) * double(end - begin);
    }
    history.push_back(total / double(images.size()));
  }
  return history;
}

std::vector<double> LevelRegressor::predict(std::span<const Image> images) const {
  NoGradScope<float> no_grad;
  std::vector<double> out;
  for (std::size_t begin = 0; begin < images.size(); begin += 64) {
    const auto part = images.subspan(begin, std::min<std::size_t>(64, images.size() - begin));
    for (const Image& im : part)
      if (im.rows() != config_.image_size || im.cols() != config_.image_size)
        throw DimensionError("level regressor: image size does not match the configuration");
    const Var<float> pred = forward(Var<float>::constant(images_to_tensor<float>(part)));
    for (float v : pred.value().values()) out.push_back(std::clamp(double(v), 0.0, 1.0));
  }
  return out;
}

double LevelRegressor::predict(const Image& image) const { return predict(std::span<const Image>(&image, 1))[0]; }

LevelRegressor train_level_regressor(std::span<const Image> images, std::span<const double> levels,
                                     const RegressorConfig& config) {
  LevelRegressor reg(config);
  reg.fit(images, levels);
  return reg;
}

std::size_t select_target_bpr(std::span<const Image> candidates, const LevelRegressor& regressor,
                              double target_level) {
  if (candidates.empty()) throw ContractError("select_target_bpr: no candidates");
  const auto predicted = regressor.predict(candidates);
  std::size_t best = 0;
  for (std::size_t i = 1; i < predicted.size(); ++i)
    if (std::fabs(predicted[i] - target_level) < std::fabs(predicted[best] - target_level)) best = i;
  return best;
}

}  // namespace slicegen
