#include "slicegen/model.hpp"

#include <cmath>
#include <map>

namespace slicegen {

namespace {

constexpr std::uint64_t kGeneratorInit = 0x67656e69;  // "geni"
constexpr std::uint64_t kCriticInit = 0x63726974;     // "crit"
constexpr std::size_t kKernel = 4;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPad = 1;

template <typename Real>
Tensor<Real> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Real> values(shape_size(shape));
  for (Real& v : values) v = static_cast<Real>(dist(rng));
  return Tensor<Real>(std::move(shape), std::move(values));
}

template <typename Real>
void set_or_add(ParameterSet<Real>& params, const std::string& name, Tensor<Real> value) {
  if (params.contains(name))
    params.at(name).set_value(std::move(value));
  else
    params.add(name, std::move(value));
}

template <typename Real>
void init_trunk(ParameterSet<Real>& params, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  std::size_t cin = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t cout = cfg.channels[i];
    const std::string layer = prefix + ".conv" + std::to_string(i + 1);
    const double std_he = std::sqrt(2.0 / double(cin * kKernel * kKernel));
    set_or_add(params, layer + ".weight", normal_tensor<Real>({cout, cin, kKernel, kKernel}, std_he, rng));
    set_or_add(params, layer + ".bias", Tensor<Real>({cout}));
    cin = cout;
  }
}

template <typename Real>
void init_affine(ParameterSet<Real>& params, const std::string& prefix, std::size_t in, std::size_t out,
                 double gain, Rng& rng) {
  set_or_add(params, prefix + ".weight", normal_tensor<Real>({in, out}, gain / std::sqrt(double(in)), rng));
  set_or_add(params, prefix + ".bias", Tensor<Real>({out}));
}

template <typename Real>
Var<Real> affine(const ParameterSet<Real>& params, const std::string& prefix, const Var<Real>& x) {
  return bias_add(matmul(x, params.at(prefix + ".weight")), params.at(prefix + ".bias"));
}

}  // namespace

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (image_size < 8 || image_size % 8 != 0)
    throw ConfigError("image_size must be a positive multiple of 8, got " + std::to_string(image_size));
  for (std::size_t c : channels)
    if (c < 1) throw ConfigError("channel counts must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0, 1)");
}

std::size_t ModelConfig::feature_size() const {
  const std::size_t s = image_size / 8;
  return channels[2] * s * s;
}

template <typename Real>
CSliceGen<Real>::CSliceGen(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_generator(derive_seed(seed, {kGeneratorInit}));
  init_critic(derive_seed(seed, {kCriticInit}));
}

template <typename Real>
void CSliceGen<Real>::init_generator(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = config_.latent_dim, f = config_.feature_size();
  init_trunk(params_, "encoder1", config_, rng);
  init_affine(params_, "encoder1.fc", f, k, 1.0, rng);
  init_trunk(params_, "encoder2", config_, rng);
  // Small head so the posterior starts near the prior.
  init_affine(params_, "encoder2.fc", f, 2 * k, 0.1, rng);

  init_affine(params_, "decoder.fc", 2 * k, f, std::sqrt(2.0), rng);
  const auto& ch = config_.channels;
  const std::array<std::size_t, 4> widths{ch[2], ch[1], ch[0], 1};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string layer = "decoder.deconv" + std::to_string(i + 1);
    // Each output pixel of a stride-2, 4x4 transposed conv sees 2x2 taps per input channel.
    const double std_he = std::sqrt((i == 2 ? 1.0 : 2.0) / double(widths[i] * 4));
    set_or_add(params_, layer + ".weight",
               normal_tensor<Real>({widths[i], widths[i + 1], kKernel, kKernel}, std_he, rng));
    set_or_add(params_, layer + ".bias", Tensor<Real>({widths[i + 1]}));
  }
}

template <typename Real>
void CSliceGen<Real>::init_critic(std::uint64_t seed) {
  Rng rng(seed);
  init_trunk(params_, "critic", config_, rng);
  init_affine(params_, "critic.fc", config_.feature_size(), 1, 1.0, rng);
}

template <typename Real>
std::vector<typename CSliceGen<Real>::Item> CSliceGen<Real>::generator_parameters() const {
  std::vector<Item> out;
  for (const auto& it : params_.items())
    if (it.first.rfind("critic.", 0) != 0) out.push_back(it);
  return out;
}

template <typename Real>
std::vector<typename CSliceGen<Real>::Item> CSliceGen<Real>::critic_parameters() const {
  return params_.with_prefix("critic.");
}

template <typename Real>
void CSliceGen<Real>::check_images(const Var<Real>& images, const char* what) const {
  const Shape& s = images.shape();
  const std::size_t n = config_.image_size;
  if (s.size() != 4 || s[1] != 1 || s[2] != n || s[3] != n)
    throw DimensionError(std::string(what) + ": expected [N, 1, " + std::to_string(n) + ", " +
                         std::to_string(n) + "] images, got " + shape_string(s));
}

template <typename Real>
Var<Real> CSliceGen<Real>::encoder_trunk(const std::string& prefix, const Var<Real>& images) const {
  Var<Real> h = images;
  for (int i = 1; i <= 3; ++i) {
    const std::string layer = prefix + ".conv" + std::to_string(i);
    h = conv2d(h, params_.at(layer + ".weight"), kStride, kPad);
    h = leaky_relu(bias_add(h, params_.at(layer + ".bias")), config_.leaky_slope);
  }
  return reshape(h, {images.shape()[0], config_.feature_size()});
}

template <typename Real>
Var<Real> CSliceGen<Real>::encode_condition(const Var<Real>& images) const {
  check_images(images, "encode_condition");
  return affine(params_, "encoder1.fc", encoder_trunk("encoder1", images));
}

template <typename Real>
GaussianParams<Real> CSliceGen<Real>::encode_target(const Var<Real>& images) const {
  check_images(images, "encode_target");
  const Var<Real> out = affine(params_, "encoder2.fc", encoder_trunk("encoder2", images));
  const std::size_t k = config_.latent_dim;
  return {slice(out, 1, 0, k), slice(out, 1, k, 2 * k)};
}

template <typename Real>
Var<Real> CSliceGen<Real>::decode(const Var<Real>& z_c, const Var<Real>& z) const {
  const std::size_t k = config_.latent_dim;
  if (z_c.shape().size() != 2 || z_c.shape()[1] != k || z.shape() != z_c.shape())
    throw DimensionError("decode: expected two [N, " + std::to_string(k) + "] latents, got " +
                         shape_string(z_c.shape()) + " and " + shape_string(z.shape()));
  const std::size_t n = z_c.shape()[0], s = config_.image_size / 8;
  Var<Real> h = leaky_relu(affine(params_, "decoder.fc", concat<Real>({z_c, z}, 1)), config_.leaky_slope);
  h = reshape(h, {n, config_.channels[2], s, s});
  for (int i = 1; i <= 3; ++i) {
    const std::string layer = "decoder.deconv" + std::to_string(i);
    h = bias_add(conv_transpose2d(h, params_.at(layer + ".weight"), kStride, kPad),
                 params_.at(layer + ".bias"));
    h = i < 3 ? leaky_relu(h, config_.leaky_slope) : sigmoid(h);
  }
  return h;
}

template <typename Real>
Var<Real> CSliceGen<Real>::critic(const Var<Real>& images) const {
  check_images(images, "critic");
  return affine(params_, "critic.fc", encoder_trunk("critic", images));
}

template <typename Real>
Var<Real> reparameterize(const GaussianParams<Real>& g, const Var<Real>& eps) {
  if (g.mu.shape() != g.log_var.shape() || eps.shape() != g.mu.shape())
    throw DimensionError("reparameterize: mu " + shape_string(g.mu.shape()) + ", log_var " +
                         shape_string(g.log_var.shape()) + ", eps " + shape_string(eps.shape()));
  return add(g.mu, mul(exp(scale(g.log_var, 0.5)), eps));
}

template <typename Real>
Var<Real> kl_loss(const GaussianParams<Real>& g) {
  if (g.mu.shape() != g.log_var.shape())
    throw DimensionError("kl_loss: mu and log_var shapes differ");
  const std::size_t batch = g.mu.shape().size() > 1 ? g.mu.shape()[0] : 1;
  Var<Real> terms = sub(add(square(g.mu), exp(g.log_var)), add_scalar(g.log_var, 1.0));
  return scale(sum(terms), 0.5 / double(batch));
}

template <typename Real>
Var<Real> l1_loss(const Var<Real>& x, const Var<Real>& y) {
  return mean(abs(sub(x, y)));
}

std::string to_string(GpMode mode) { return mode == GpMode::exact ? "exact" : "fd"; }

GpMode parse_gp_mode(const std::string& text) {
  if (text == "fd" || text == "directional-fd" || text == "directional_fd") return GpMode::directional_fd;
  if (text == "exact") return GpMode::exact;
  throw ConfigError("unknown gp_mode '" + text + "' (expected fd or exact)");
}

namespace {

template <typename Real>
void normalize_rows(std::vector<Real>& v, std::size_t rows, Rng& rng) {
  const std::size_t cols = v.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    Real* row = v.data() + r * cols;
    double norm = 0.0;
    for (std::size_t j = 0; j < cols; ++j) norm += double(row[j]) * double(row[j]);
    norm = std::sqrt(norm);
    while (norm == 0.0) {  // degenerate row: fall back to a random direction
      norm = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        row[j] = static_cast<Real>(standard_normal(rng));
        norm += double(row[j]) * double(row[j]);
      }
      norm = std::sqrt(norm);
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] = static_cast<Real>(row[j] / norm);
  }
}

// Gradient of sum(D(x)) with respect to x, leaving every other gradient as it was.
template <typename Real>
std::vector<Real> input_gradient(const Critic<Real>& critic, const Tensor<Real>& x) {
  Tape<Real> tape;
  Var<Real> xv = Var<Real>::parameter(x);
  Var<Real> total;
  {
    TapeScope<Real> scope(tape);
    total = sum(critic(xv));
  }
  std::map<const void*, std::pair<typename Tape<Real>::NodePtr, std::vector<Real>>> saved;
  for (const auto& entry : tape.entries())
    for (const auto& in : entry.inputs)
      if (in->is_leaf && in->requires_grad && in != xv.node()) saved.try_emplace(in.get(), in, in->grad);
  if (total.is_leaf()) return std::vector<Real>(x.size(), Real{0});  // critic ignores its input
  tape.backward(total);
  for (auto& [key, node_grad] : saved) node_grad.first->grad = std::move(node_grad.second);
  return xv.grad().storage();
}

}  // namespace

template <typename Real>
Var<Real> gradient_penalty(const Critic<Real>& critic, const Tensor<Real>& real, const Tensor<Real>& fake,
                           const GradientPenaltyOptions& opt, Rng& rng,
                           const std::type_identity_t<std::optional<Tensor<Real>>>& alphas,
                           const std::type_identity_t<std::optional<Tensor<Real>>>& directions) {
  if (!(opt.epsilon > 0.0)) throw ConfigError("gradient penalty epsilon must be > 0");
  if (!(opt.lambda >= 0.0)) throw ConfigError("gradient penalty lambda must be >= 0");
  if (opt.directions < 1) throw ConfigError("gradient penalty needs at least one direction");
  if (real.shape() != fake.shape())
    throw DimensionError("gradient_penalty: real " + shape_string(real.shape()) + " vs fake " +
                         shape_string(fake.shape()));
  if (real.rank() < 2) throw DimensionError("gradient_penalty: expected a batch of samples");
  const std::size_t n = real.dim(0), pixels = real.size() / n;
  if (alphas && alphas->size() != n) throw DimensionError("gradient_penalty: one alpha per sample");

  std::vector<Real> hat(real.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double a = alphas ? double((*alphas)[i]) : uniform01(rng);
    for (std::size_t j = i * pixels; j < (i + 1) * pixels; ++j)
      hat[j] = static_cast<Real>(a * real[j] + (1.0 - a) * fake[j]);
  }
  const Tensor<Real> x_hat(real.shape(), hat);

  std::size_t m = opt.directions;
  std::vector<std::vector<Real>> dirs;
  double correction = opt.sqrt_n_correction ? std::sqrt(double(pixels)) : 1.0;
  if (directions) {
    if (directions->shape() != real.shape())
      throw DimensionError("gradient_penalty: directions must match the batch shape");
    dirs.push_back(directions->storage());
    normalize_rows(dirs.back(), n, rng);
    m = 1;
  } else if (opt.mode == GpMode::exact) {
    dirs.push_back(input_gradient(critic, x_hat));
    normalize_rows(dirs.back(), n, rng);
    m = 1;
    correction = 1.0;
  } else {
    for (std::size_t k = 0; k < m; ++k) {
      dirs.push_back(standard_normal_tensor<Real>(real.shape(), rng).storage());
      normalize_rows(dirs.back(), n, rng);
    }
  }

  // D at x_hat and at every perturbed point in one batch.
  std::vector<Var<Real>> inputs{Var<Real>::constant(x_hat)};
  for (const auto& u : dirs) {
    std::vector<Real> moved(hat);
    for (std::size_t j = 0; j < moved.size(); ++j) moved[j] = static_cast<Real>(moved[j] + opt.epsilon * u[j]);
    inputs.push_back(Var<Real>::constant(Tensor<Real>(real.shape(), std::move(moved))));
  }
  const Var<Real> scores = critic(concat(inputs, 0));
  if (scores.size() != n * (m + 1)) throw DimensionError("gradient_penalty: critic must return one score per sample");
  const Var<Real> base = slice(scores, 0, 0, n);

  Var<Real> norm_est;
  if (m == 1) {
    norm_est = scale(abs(sub(slice(scores, 0, n, 2 * n), base)), correction / opt.epsilon);
  } else {
    Var<Real> acc;
    for (std::size_t k = 1; k <= m; ++k) {
      const Var<Real> sq = square(sub(slice(scores, 0, k * n, (k + 1) * n), base));
      acc = k == 1 ? sq : add(acc, sq);
    }
    norm_est = sqrt(scale(acc, correction * correction / (double(m) * opt.epsilon * opt.epsilon)));
  }
  return scale(mean(square(add_scalar(norm_est, -1.0))), opt.lambda);
}

template <typename Real>
Var<Real> wasserstein_critic_loss(const Var<Real>& d_real, const Var<Real>& d_fake, const Var<Real>& penalty) {
  return add(sub(mean(d_fake), mean(d_real)), penalty);
}

template <typename Real>
Var<Real> critic_loss(const Critic<Real>& critic, const Tensor<Real>& real, const Tensor<Real>& fake_gen,
                      const Tensor<Real>& fake_recon, const GradientPenaltyOptions& options, Rng& rng) {
  if (fake_gen.shape() != real.shape() || fake_recon.shape() != real.shape())
    throw DimensionError("critic_loss: real, generated and reconstructed batches must share a shape");
  const std::size_t n = real.dim(0);
  const Var<Real> real_v = Var<Real>::constant(real);
  const Var<Real> fakes = concat<Real>({Var<Real>::constant(fake_gen), Var<Real>::constant(fake_recon)}, 0);
  const Var<Real> scores = critic(concat<Real>({real_v, fakes}, 0));
  const Var<Real> d_real = slice(scores, 0, 0, n), d_fake = slice(scores, 0, n, 3 * n);
  Var<Real> penalty = Var<Real>::constant(Tensor<Real>::scalar(0));
  if (options.lambda > 0.0) {
    const Tensor<Real> reals = concat<Real>({real_v, real_v}, 0).value();
    penalty = gradient_penalty(critic, reals, fakes.value(), options, rng);
  }
  return wasserstein_critic_loss(d_real, d_fake, penalty);
}

template <typename Real>
Var<Real> generator_adv_loss(const Critic<Real>& critic, const Var<Real>& fake_gen, const Var<Real>& fake_recon) {
  return scale(mean(critic(concat<Real>({fake_gen, fake_recon}, 0))), -1.0);
}

template <typename Real>
GeneratorLosses<Real> generator_losses(const CSliceGen<Real>& model, const Tensor<Real>& conditionals,
                                       const Tensor<Real>& targets, const Tensor<Real>& eps,
                                       const Tensor<Real>& z_prior, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (conditionals.shape() != targets.shape())
    throw DimensionError("generator_losses: conditional and target batches differ in shape");
  const Var<Real> x = Var<Real>::constant(conditionals);
  const Var<Real> t = Var<Real>::constant(targets);
  GeneratorLosses<Real> out;
  const Var<Real> z_c = model.encode_condition(x);
  const GaussianParams<Real> posterior = model.encode_target(t);
  out.x_recon = model.decode(z_c, reparameterize(posterior, Var<Real>::constant(eps)));
  out.x_gen = model.decode(z_c, Var<Real>::constant(z_prior));
  out.recon = l1_loss(t, out.x_recon);
  out.gen = l1_loss(t, out.x_gen);
  out.kl = kl_loss(posterior);
  const Critic<Real> critic = [&model](const Var<Real>& im) { return model.critic(im); };
  Var<Real> total = add(add(out.recon, out.gen), out.kl);
  if (beta > 0.0) {
    out.adversarial = generator_adv_loss(critic, out.x_gen, out.x_recon);
    total = add(total, scale(out.adversarial, beta));
  } else {
    NoGradScope<Real> no_grad;
    out.adversarial = generator_adv_loss(critic, out.x_gen.detach(), out.x_recon.detach());
  }
  out.total = total;
  return out;
}

template <typename Real>
Tensor<Real> images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const std::size_t rows = images[0]->rows(), cols = images[0]->cols();
  std::vector<Real> values;
  values.reserve(images.size() * rows * cols);
  for (const Image* im : images) {
    require_same_size(*images[0], *im, "images_to_tensor");
    for (float p : im->pixels()) values.push_back(static_cast<Real>(p));
  }
  return Tensor<Real>({images.size(), 1, rows, cols}, std::move(values));
}

template <typename Real>
Tensor<Real> images_to_tensor(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  for (const Image& im : images) ptrs.push_back(&im);
  return images_to_tensor<Real>(std::span<const Image* const>(ptrs));
}

template <typename Real>
std::vector<Image> tensor_to_images(const Tensor<Real>& batch) {
  if (batch.rank() != 4 || batch.dim(1) != 1)
    throw DimensionError("tensor_to_images: expected [N, 1, H, W], got " + shape_string(batch.shape()));
  const std::size_t n = batch.dim(0), rows = batch.dim(2), cols = batch.dim(3);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(rows * cols);
    for (std::size_t j = 0; j < px.size(); ++j) px[j] = static_cast<float>(batch[i * px.size() + j]);
    out.emplace_back(rows, cols, std::move(px));
  }
  return out;
}

template <typename Real>
Tensor<Real> standard_normal_tensor(Shape shape, Rng& rng) {
  std::vector<Real> values(shape_size(shape));
  for (Real& v : values) v = static_cast<Real>(standard_normal(rng));
  return Tensor<Real>(std::move(shape), std::move(values));
}

namespace {
constexpr std::size_t kInferenceChunk = 64;
}

template <typename Real>
std::vector<Image> generate(const CSliceGen<Real>& model, std::span<const Image> conditionals, Rng& rng) {
  NoGradScope<Real> no_grad;
  std::vector<Image> out;
  const std::size_t k = model.config().latent_dim;
  for (std::size_t begin = 0; begin < conditionals.size(); begin += kInferenceChunk) {
    const auto part = conditionals.subspan(begin, std::min(kInferenceChunk, conditionals.size() - begin));
    const Var<Real> x = Var<Real>::constant(images_to_tensor<Real>(part));
    const Var<Real> z_c = model.encode_condition(x);
    const Var<Real> z = Var<Real>::constant(standard_normal_tensor<Real>({part.size(), k}, rng));
    for (Image& im : tensor_to_images(model.decode(z_c, z).value())) out.push_back(std::move(im));
  }
  return out;
}

template <typename Real>
std::vector<Image> reconstruct(const CSliceGen<Real>& model, std::span<const Image> conditionals,
                               std::span<const Image> targets) {
  if (conditionals.size() != targets.size())
    throw DimensionError("reconstruct: conditional and target counts differ");
  NoGradScope<Real> no_grad;
  std::vector<Image> out;
  for (std::size_t begin = 0; begin < conditionals.size(); begin += kInferenceChunk) {
    const std::size_t len = std::min(kInferenceChunk, conditionals.size() - begin);
    const Var<Real> x = Var<Real>::constant(images_to_tensor<Real>(conditionals.subspan(begin, len)));
    const Var<Real> t = Var<Real>::constant(images_to_tensor<Real>(targets.subspan(begin, len)));
    const Var<Real> out_batch = model.decode(model.encode_condition(x), model.encode_target(t).mu);
    for (Image& im : tensor_to_images(out_batch.value())) out.push_back(std::move(im));
  }
  return out;
}

#define SLICEGEN_INSTANTIATE(Real)                                                                     \
  template class CSliceGen<Real>;                                                                     \
  template Var<Real> reparameterize(const GaussianParams<Real>&, const Var<Real>&);                  \
  template Var<Real> kl_loss(const GaussianParams<Real>&);                                           \
  template Var<Real> l1_loss(const Var<Real>&, const Var<Real>&);                                    \
  template Var<Real> gradient_penalty(const Critic<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                      const GradientPenaltyOptions&, Rng&,                            \
                                      const std::type_identity_t<std::optional<Tensor<Real>>>&,                             \
                                      const std::type_identity_t<std::optional<Tensor<Real>>>&);                            \
  template Var<Real> wasserstein_critic_loss(const Var<Real>&, const Var<Real>&, const Var<Real>&);  \
  template Var<Real> critic_loss(const Critic<Real>&, const Tensor<Real>&, const Tensor<Real>&,       \
                                 const Tensor<Real>&, const GradientPenaltyOptions&, Rng&);           \
  template Var<Real> generator_adv_loss(const Critic<Real>&, const Var<Real>&, const Var<Real>&);    \
  template GeneratorLosses<Real> generator_losses(const CSliceGen<Real>&, const Tensor<Real>&,        \
                                                  const Tensor<Real>&, const Tensor<Real>&,          \
                                                  const Tensor<Real>&, double);                      \
  template Tensor<Real> images_to_tensor(std::span<const Image>);                                    \
  template Tensor<Real> images_to_tensor(std::span<const Image* const>);                             \
  template std::vector<Image> tensor_to_images(const Tensor<Real>&);                                 \
  template Tensor<Real> standard_normal_tensor(Shape, Rng&);                                         \
  template std::vector<Image> generate(const CSliceGen<Real>&, std::span<const Image>, Rng&);        \
  template std::vector<Image> reconstruct(const CSliceGen<Real>&, std::span<const Image>,            \
                                          std::span<const Image>);

SLICEGEN_INSTANTIATE(float)
SLICEGEN_INSTANTIATE(double)

}  // namespace slicegen
