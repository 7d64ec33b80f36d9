#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slicegen/image.hpp"
#include "slicegen/optim.hpp"

namespace slicegen {

/// B x B counts of co-located intensity pairs; bin(v) = min(B - 1, floor(v * B)).
class JointHistogram {
 public:
  JointHistogram(const Image& a, const Image& b, std::size_t bins);
  /// Directly from a row-major B x B table of non-negative weights.
  JointHistogram(std::size_t bins, std::vector<double> counts);

  std::size_t bins() const noexcept { return bins_; }
  double total() const noexcept { return total_; }
  double count(std::size_t i, std::size_t j) const { return counts_[i * bins_ + j]; }
  std::vector<double> row_marginal() const;
  std::vector<double> col_marginal() const;

  /// Sum p(x,y) ln(p(x,y) / (p(x) p(y))) over nonzero cells, in nats; never negative.
  double mutual_information() const;

 private:
  std::size_t bins_;
  std::vector<double> counts_;
  double total_ = 0.0;
};

std::size_t intensity_bin(double value, std::size_t bins);

double mutual_information(const Image& a, const Image& b, std::size_t bins = 16);
/// Entropy in nats of the binned intensity distribution.
double histogram_entropy(const Image& a, std::size_t bins = 16);

/// Resamples `moving` so its body bounding box (pixels above `body_level`)
/// lands on the reference's: per-axis scale plus shift, bilinear, zero outside.
/// Returns `moving` unchanged when either image has no body or the boxes match.
Image register_to_reference(const Image& moving, const Image& reference, float body_level = 0.04f);

/// MI between the registered candidate and the reference.
double registered_mutual_information(const Image& candidate, const Image& reference, std::size_t bins = 16);

/// Index of the candidate with the largest registered MI against the
/// reference; ties go to the lowest index.
std::size_t select_target_mi(std::span<const Image> candidates, const Image& reference, std::size_t bins = 16);

struct RegressorConfig {
  std::size_t image_size = 32;
  std::size_t channels = 8;
  int epochs = 20;
  double lr = 2e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

/// Small conv net regressing an image's level, fit by mean squared error; predictions are clamped to [0, 1].
class LevelRegressor {
 public:
  explicit LevelRegressor(RegressorConfig config);

  /// Returns the mean training loss of each epoch.
  std::vector<double> fit(std::span<const Image> images, std::span<const double> levels);
  double predict(const Image& image) const;
  std::vector<double> predict(std::span<const Image> images) const;

  const RegressorConfig& config() const noexcept { return config_; }
  const ParameterSet<float>& parameters() const noexcept { return params_; }

 private:
  Var<float> forward(const Var<float>& images) const;

  RegressorConfig config_;
  ParameterSet<float> params_;
};

LevelRegressor train_level_regressor(std::span<const Image> images, std::span<const double> levels,
                                     const RegressorConfig& config = {});

/// Index minimizing |predict(candidate) - target_level|; ties go to the lowest index.
std::size_t select_target_bpr(std::span<const Image> candidates, const LevelRegressor& regressor,
                              double target_level);

}  // namespace slicegen
