#pragma once

// Conditional slice generator: two encoders, a decoder and a Wasserstein critic.
//
// Images travel as [N, 1, S, S] tensors. encoder1 maps the conditional slice to
// z_c, encoder2 maps the target slice to (mu, log_var). The decoder takes the
// concatenation [z_c, z] and emits an S x S image through a sigmoid. The critic
// mirrors the encoder and returns one unbounded score per image.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>
#include <type_traits>

#include "slicegen/autodiff.hpp"
#include "slicegen/image.hpp"
#include "slicegen/optim.hpp"
#include "slicegen/random.hpp"

namespace slicegen {

struct ModelConfig {
  std::size_t latent_dim = 32;
  std::size_t image_size = 32;  // must be a multiple of 8
  std::array<std::size_t, 3> channels{8, 16, 32};
  double leaky_slope = 0.2;

  void validate() const;
  /// Length of the flattened feature map after the third strided conv.
  std::size_t feature_size() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Real>
struct GaussianParams {
  Var<Real> mu;       // [N, K]
  Var<Real> log_var;  // [N, K]
};

template <typename Real>
class CSliceGen {
 public:
  using Item = typename ParameterSet<Real>::Item;

  /// Generator and critic weights come from independent streams of `seed`.
  CSliceGen(ModelConfig config, std::uint64_t seed);

  void init_generator(std::uint64_t seed);
  void init_critic(std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet<Real>& parameters() noexcept { return params_; }
  const ParameterSet<Real>& parameters() const noexcept { return params_; }
  std::vector<Item> generator_parameters() const;
  std::vector<Item> critic_parameters() const;

  Var<Real> encode_condition(const Var<Real>& images) const;
  GaussianParams<Real> encode_target(const Var<Real>& images) const;
  Var<Real> decode(const Var<Real>& z_c, const Var<Real>& z) const;
  Var<Real> critic(const Var<Real>& images) const;

 private:
  Var<Real> encoder_trunk(const std::string& prefix, const Var<Real>& images) const;
  void check_images(const Var<Real>& images, const char* what) const;

  ModelConfig config_;
  ParameterSet<Real> params_;
};

/// z = mu + exp(log_var / 2) * eps.
template <typename Real>
Var<Real> reparameterize(const GaussianParams<Real>& g, const Var<Real>& eps);

/// KL(N(mu, sigma^2) || N(0, I)) summed over latent dimensions, averaged over the batch.
template <typename Real>
Var<Real> kl_loss(const GaussianParams<Real>& g);

/// Mean absolute difference over every element.
template <typename Real>
Var<Real> l1_loss(const Var<Real>& x, const Var<Real>& y);

enum class GpMode { directional_fd, exact };

std::string to_string(GpMode mode);
GpMode parse_gp_mode(const std::string& text);

struct GradientPenaltyOptions {
  double lambda = 10.0;
  double epsilon = 1e-2;
  GpMode mode = GpMode::directional_fd;
  /// Scale directional differences by sqrt(pixel count) (fd mode only).
  bool sqrt_n_correction = true;
  /// Random directions averaged per sample in fd mode.
  std::size_t directions = 1;
};

template <typename Real>
using Critic = std::function<Var<Real>(const Var<Real>&)>;

/// lambda * mean over samples of (||grad_x D(x_hat)|| - 1)^2 at random interpolates
/// x_hat = a * real + (1 - a) * fake. The gradient norm is replaced by a finite
/// difference of D along a unit direction: random directions in fd mode, the
/// gradient direction itself in exact mode. `alphas` and `directions` override
/// the random draws ([N] and [N, ...] tensors respectively).
template <typename Real>
Var<Real> gradient_penalty(const Critic<Real>& critic, const Tensor<Real>& real,
                           const Tensor<Real>& fake, const GradientPenaltyOptions& options, Rng& rng,
                           const std::type_identity_t<std::optional<Tensor<Real>>>& alphas = std::nullopt,
                           const std::type_identity_t<std::optional<Tensor<Real>>>& directions = std::nullopt);

/// mean(d_fake) - mean(d_real) + penalty.
template <typename Real>
Var<Real> wasserstein_critic_loss(const Var<Real>& d_real, const Var<Real>& d_fake,
                                  const Var<Real>& penalty);

/// Critic loss with x_gen and x_recon both treated as fakes. Inputs are values,
/// so nothing flows back into the generator.
template <typename Real>
Var<Real> critic_loss(const Critic<Real>& critic, const Tensor<Real>& real, const Tensor<Real>& fake_gen,
                      const Tensor<Real>& fake_recon, const GradientPenaltyOptions& options, Rng& rng);

/// -mean(D([x_gen; x_recon])).
template <typename Real>
Var<Real> generator_adv_loss(const Critic<Real>& critic, const Var<Real>& fake_gen,
                             const Var<Real>& fake_recon);

template <typename Real>
struct GeneratorLosses {
  Var<Real> recon;        // L1(target, x_recon)
  Var<Real> gen;          // L1(target, x_gen)
  Var<Real> kl;
  Var<Real> adversarial;  // -mean D([x_gen; x_recon])
  Var<Real> total;        // recon + gen + kl + beta * adversarial
  Var<Real> x_recon;
  Var<Real> x_gen;
};

/// Both decoding paths and the generator objective for one batch. With
/// beta = 0 the adversarial term is evaluated for reporting only and takes no
/// part in the graph.
template <typename Real>
GeneratorLosses<Real> generator_losses(const CSliceGen<Real>& model, const Tensor<Real>& conditionals,
                                       const Tensor<Real>& targets, const Tensor<Real>& eps,
                                       const Tensor<Real>& z_prior, double beta);

/// Stacks equally sized images into an [N, 1, S, S] tensor.
template <typename Real>
Tensor<Real> images_to_tensor(std::span<const Image> images);
template <typename Real>
Tensor<Real> images_to_tensor(std::span<const Image* const> images);
/// Inverse of images_to_tensor.
template <typename Real>
std::vector<Image> tensor_to_images(const Tensor<Real>& batch);

template <typename Real>
Tensor<Real> standard_normal_tensor(Shape shape, Rng& rng);

/// decode(encode_condition(x), z_prior) with z_prior ~ N(0, I), no gradients recorded.
template <typename Real>
std::vector<Image> generate(const CSliceGen<Real>& model, std::span<const Image> conditionals, Rng& rng);

/// decode(encode_condition(x), mu(encode_target(target))): the reconstruction path.
template <typename Real>
std::vector<Image> reconstruct(const CSliceGen<Real>& model, std::span<const Image> conditionals,
                               std::span<const Image> targets);

}  // namespace slicegen
