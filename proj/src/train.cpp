#include "slicegen/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slicegen {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"
constexpr std::uint64_t kStepStream = 0x73746570;     // "step"

template <typename Fn>
auto guarded(const char* term, Fn&& fn) {
  try {
    return fn();
  } catch (const DomainError& e) {
    throw TrainingDivergedError(term, e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(lambda_gp >= 0.0)) throw ConfigError("lambda_gp must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (critic_steps < 0) throw ConfigError("critic_steps must be >= 0");
  if (!(gp_epsilon > 0.0)) throw ConfigError("gp_epsilon must be > 0");
  if (max_shift < 0 || std::size_t(2 * max_shift) >= model.image_size)
    throw ConfigError("max_shift out of range");
}

GradientPenaltyOptions TrainConfig::gradient_penalty() const {
  GradientPenaltyOptions o;
  o.lambda = lambda_gp;
  o.epsilon = gp_epsilon;
  o.mode = gp_mode;
  return o;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"latent_dim", c.model.latent_dim},
          {"image_size", c.model.image_size},
          {"channels", c.model.channels},
          {"leaky_slope", c.model.leaky_slope},
          {"beta", c.beta},
          {"lambda_gp", c.lambda_gp},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"critic_steps", c.critic_steps},
          {"gp_epsilon", c.gp_epsilon},
          {"gp_mode", to_string(c.gp_mode)},
          {"augment", c.augment},
          {"max_shift", c.max_shift}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "latent_dim") c.model.latent_dim = value.get<std::size_t>();
      else if (key == "image_size") c.model.image_size = value.get<std::size_t>();
      else if (key == "channels") c.model.channels = value.get<std::array<std::size_t, 3>>();
      else if (key == "leaky_slope") c.model.leaky_slope = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "lambda_gp") c.lambda_gp = value.get<double>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "critic_steps") c.critic_steps = value.get<int>();
      else if (key == "gp_epsilon") c.gp_epsilon = value.get<double>();
      else if (key == "gp_mode") c.gp_mode = parse_gp_mode(value.get<std::string>());
      else if (key == "augment") c.augment = value.get<bool>();
      else if (key == "max_shift") c.max_shift = value.get<int>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void PairedSet::validate() const {
  const std::size_t n = conditionals.size();
  if (targets.size() != n || subject_ids.size() != n || levels.size() != n)
    throw DimensionError("paired set columns differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    require_same_size(conditionals[0], conditionals[i], "paired set");
    require_same_size(conditionals[0], targets[i], "paired set");
  }
}

PairedSet make_paired_set(const std::vector<SubjectProfile>& subjects, const std::vector<double>& levels,
                          double target_level, const PhantomConfig& phantom) {
  PairedSet set;
  for (const SubjectProfile& s : subjects) {
    const Image target = render_slice(s, target_level, phantom).image;
    for (double v : levels) {
      set.conditionals.push_back(render_slice(s, v, phantom).image);
      set.targets.push_back(target);
      set.subject_ids.push_back(s.subject_id);
      set.levels.push_back(v);
    }
  }
  return set;
}

Trainer::Trainer(TrainConfig config) : Trainer(config, CSliceGen<float>(config.model, config.seed)) {}

Trainer::Trainer(TrainConfig config, CSliceGen<float> model)
    : config_((config.validate(), config)),
      model_(std::move(model)),
      gen_opt_(model_.generator_parameters(), config_.adam()),
      critic_opt_(model_.critic_parameters(), config_.adam()) {
  if (!(model_.config() == config_.model)) throw ConfigError("model does not match the train config");
}

std::size_t Trainer::steps_per_epoch(std::size_t pairs) const {
  return (pairs + config_.batch_size - 1) / config_.batch_size;
}

LossReport Trainer::train_step(std::span<const Image* const> conditionals, std::span<const Image* const> targets,
                               Rng& rng) {
  if (conditionals.empty()) throw ContractError("train_step needs a nonempty batch");
  if (conditionals.size() != targets.size()) throw DimensionError("train_step: batch columns differ");
  const Tensor<float> x = images_to_tensor<float>(conditionals);
  const Tensor<float> t = images_to_tensor<float>(targets);
  const std::size_t n = conditionals.size(), k = config_.model.latent_dim;
  const Tensor<float> eps = standard_normal_tensor<float>({n, k}, rng);
  const Tensor<float> z_prior = standard_normal_tensor<float>({n, k}, rng);

  LossReport report;
  const Critic<float> critic = [this](const Var<float>& im) { return model_.critic(im); };

  // Critic phase on fakes from the current generator, cut from its graph.
  if (config_.beta > 0.0 && config_.critic_steps > 0) {
    Var<float> x_gen, x_recon;
    guarded("critic_fakes", [&] {
      NoGradScope<float> no_grad;
      const Var<float> z_c = model_.encode_condition(Var<float>::constant(x));
      const GaussianParams<float> g = model_.encode_target(Var<float>::constant(t));
      x_recon = model_.decode(z_c, reparameterize(g, Var<float>::constant(eps)));
      x_gen = model_.decode(z_c, Var<float>::constant(z_prior));
      return 0;
    });
    const GradientPenaltyOptions gp = config_.gradient_penalty();
    for (int s = 0; s < config_.critic_steps; ++s) {
      Tape<float> tape;
      critic_opt_.zero_grad();
      const Var<float> loss = guarded("critic_loss", [&] {
        TapeScope<float> scope(tape);
        return critic_loss(critic, t, x_gen.value(), x_recon.value(), gp, rng);
      });
      report.critic = loss.item();
      tape.backward(loss);
      guarded("critic_update", [&] { critic_opt_.step(); return 0; });
    }
  }

  Tape<float> tape;
  gen_opt_.zero_grad();
  const GeneratorLosses<float> losses = guarded("generator_loss", [&] {
    TapeScope<float> scope(tape);
    return generator_losses(model_, x, t, eps, z_prior, config_.beta);
  });
  report.recon = losses.recon.item();
  report.gen = losses.gen.item();
  report.kl = losses.kl.item();
  report.adversarial = losses.adversarial.item();
  report.total = losses.total.item();
  tape.backward(losses.total);
  guarded("generator_update", [&] { gen_opt_.step(); return 0; });
  // The adversarial term also deposits gradients on the critic; drop them.
  critic_opt_.zero_grad();
  return report;
}

std::vector<LossReport> Trainer::train_epoch(const PairedSet& data, int epoch,
                                             const std::function<void(const LossReport&)>& on_step) {
  data.validate();
  if (data.size() == 0) throw ContractError("train_epoch: empty training set");
  if (data.conditionals[0].rows() != config_.model.image_size)
    throw DimensionError("training images do not match the model image size");

  Rng shuffle(derive_seed(config_.seed, {kShuffleStream, std::uint64_t(epoch)}));
  Rng step_rng(derive_seed(config_.seed, {kStepStream, std::uint64_t(epoch)}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), shuffle);

  std::vector<LossReport> reports;
  std::vector<Image> cond_buf, targ_buf;
  std::uniform_int_distribution<int> shift_dist(-config_.max_shift, config_.max_shift);
  for (std::size_t begin = 0, step = 0; begin < order.size(); begin += config_.batch_size, ++step) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    cond_buf.clear();
    targ_buf.clear();
    for (std::size_t i = begin; i < end; ++i) {
      // Only the conditional is perturbed; the target keeps its canonical pose.
      Image c = data.conditionals[order[i]], t = data.targets[order[i]];
      if (config_.augment) {
        if (uniform01(shuffle) < 0.5) c = flip_horizontal(c);
        const int dy = shift_dist(shuffle), dx = shift_dist(shuffle);
        c = shift(c, dy, dx);
      }
      cond_buf.push_back(std::move(c));
      targ_buf.push_back(std::move(t));
    }
    std::vector<const Image*> cp, tp;
    for (std::size_t i = 0; i < cond_buf.size(); ++i) {
      cp.push_back(&cond_buf[i]);
      tp.push_back(&targ_buf[i]);
    }
    LossReport r = train_step(cp, tp, step_rng);
    r.epoch = epoch;
    r.step = step;
    if (on_step) on_step(r);
    reports.push_back(r);
  }
  return reports;
}

}  // namespace slicegen
