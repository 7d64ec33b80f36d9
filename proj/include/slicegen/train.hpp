#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicegen/model.hpp"
#include "slicegen/phantom.hpp"

namespace slicegen {

struct TrainConfig {
  ModelConfig model;
  double beta = 0.01;
  double lambda_gp = 10.0;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  int critic_steps = 1;
  double gp_epsilon = 1e-2;
  GpMode gp_mode = GpMode::directional_fd;
  bool augment = true;
  int max_shift = 2;  // pixels, applied with a random horizontal flip

  void validate() const;
  AdamConfig adam() const { return {lr, weight_decay, 0.9, 0.999, 1e-8}; }
  GradientPenaltyOptions gradient_penalty() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Conditional/target pairs; index i of every vector describes one pair.
struct PairedSet {
  std::vector<Image> conditionals;
  std::vector<Image> targets;
  std::vector<int> subject_ids;
  std::vector<double> levels;  // level of the conditional slice
  std::size_t size() const noexcept { return conditionals.size(); }
  void validate() const;
};

/// Every subject contributes each grid level as a conditional, paired with
/// its own slice at target_level.
PairedSet make_paired_set(const std::vector<SubjectProfile>& subjects, const std::vector<double>& levels,
                          double target_level, const PhantomConfig& phantom = {});

struct LossReport {
  int epoch = 0;
  std::size_t step = 0;
  double recon = 0.0;
  double gen = 0.0;
  double kl = 0.0;
  double critic = 0.0;     // last critic-step loss; 0 when no critic update ran
  double adversarial = 0.0;  // generator side, -mean D(fakes)
  double total = 0.0;
};

/// Owns a model and its two optimizers. Training is single-threaded and
/// deterministic given (config.seed, data).
class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, CSliceGen<float> model);
  // The optimizers hold the model's parameter nodes, so a copy would train the wrong weights.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) noexcept = default;
  Trainer& operator=(Trainer&&) noexcept = default;

  const TrainConfig& config() const noexcept { return config_; }
  CSliceGen<float>& model() noexcept { return model_; }
  const CSliceGen<float>& model() const noexcept { return model_; }
  Adam<float>& generator_optimizer() noexcept { return gen_opt_; }
  Adam<float>& critic_optimizer() noexcept { return critic_opt_; }
  const Adam<float>& generator_optimizer() const noexcept { return gen_opt_; }
  const Adam<float>& critic_optimizer() const noexcept { return critic_opt_; }

  /// One critic phase followed by one generator update on the given pairs.
  /// `rng` supplies reparameterization noise, z_prior, interpolation weights
  /// and penalty directions.
  LossReport train_step(std::span<const Image* const> conditionals, std::span<const Image* const> targets,
                        Rng& rng);

  /// Shuffled, augmented pass over the set. Randomness derives from (seed, epoch),
  /// so a resumed run repeats exactly.
  std::vector<LossReport> train_epoch(const PairedSet& data, int epoch,
                                      const std::function<void(const LossReport&)>& on_step = {});

  std::size_t steps_per_epoch(std::size_t pairs) const;

 private:
  TrainConfig config_;
  CSliceGen<float> model_;
  Adam<float> gen_opt_;
  Adam<float> critic_opt_;
};

}  // namespace slicegen
