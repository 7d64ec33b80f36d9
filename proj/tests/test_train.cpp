#include <doctest.h>

#include <cmath>

#include "slicegen/train.hpp"

using namespace slicegen;

namespace {

TrainConfig tiny_config(double beta) {
  TrainConfig c;
  c.model.latent_dim = 2;
  c.model.image_size = 8;
  c.model.channels = {2, 3, 4};
  c.beta = beta;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 3;
  c.lr = 1e-3;
  c.max_shift = 1;
  return c;
}

PairedSet tiny_set() {
  std::vector<SubjectProfile> subjects;
  for (int i = 0; i < 3; ++i) subjects.push_back(make_profile(i, 4));
  return make_paired_set(subjects, level_grid(3), 0.5, PhantomConfig{8, 4.0});
}

std::vector<LossReport> run(Trainer& t, const PairedSet& data, int epochs) {
  std::vector<LossReport> all;
  for (int e = 0; e < epochs; ++e)
    for (const auto& r : t.train_epoch(data, e)) all.push_back(r);
  return all;
}

bool same(const LossReport& a, const LossReport& b) {
  return a.epoch == b.epoch && a.step == b.step && a.recon == b.recon && a.gen == b.gen && a.kl == b.kl &&
         a.critic == b.critic && a.adversarial == b.adversarial && a.total == b.total;
}

}  // namespace

TEST_CASE("paired set layout") {
  const PairedSet data = tiny_set();
  CHECK(data.size() == 9);
  CHECK(data.levels[0] == 0.0);
  CHECK(data.levels[2] == 1.0);
  CHECK(data.targets[0] == data.targets[2]);
  CHECK(data.conditionals[1] == data.targets[1]);
}

TEST_CASE("reported total is the weighted sum of its parts") {
  const PairedSet data = tiny_set();
  for (double beta : {0.0, 0.01, 0.5}) {
    Trainer t(tiny_config(beta));
    const auto reports = run(t, data, 2);
    CHECK(reports.size() == 2 * t.steps_per_epoch(data.size()));
    for (const auto& r : reports) {
      CHECK(std::fabs(r.total - (r.recon + r.gen + r.kl + beta * r.adversarial)) <= 1e-5);
      CHECK(std::isfinite(r.critic));
    }
  }
}

TEST_CASE("beta = 0 leaves the critic alone") {
  const PairedSet data = tiny_set();
  Trainer a(tiny_config(0.0));
  std::vector<Tensor<float>> before;
  for (const auto& [n, v] : a.model().critic_parameters()) before.push_back(v.value());
  run(a, data, 2);
  std::size_t i = 0;
  for (const auto& [n, v] : a.model().critic_parameters()) CHECK(v.value() == before[i++]);
  CHECK(a.critic_optimizer().steps() == 0);

  // A different critic initialisation does not change the generator trajectory.
  CSliceGen<float> other(tiny_config(0.0).model, 3);
  other.init_critic(999);
  Trainer b(tiny_config(0.0), other);
  run(b, data, 2);
  const auto pa = a.model().generator_parameters(), pb = b.model().generator_parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].second.value() == pb[k].second.value());
}

TEST_CASE("beta > 0 trains the critic") {
  const PairedSet data = tiny_set();
  Trainer t(tiny_config(0.01));
  const Tensor<float> before = t.model().parameters().at("critic.fc.weight").value();
  run(t, data, 1);
  CHECK_FALSE(t.model().parameters().at("critic.fc.weight").value() == before);
  CHECK(t.critic_optimizer().steps() == t.steps_per_epoch(data.size()));
}

TEST_CASE("training is deterministic") {
  const PairedSet data = tiny_set();
  for (GpMode mode : {GpMode::directional_fd, GpMode::exact}) {
    TrainConfig cfg = tiny_config(0.01);
    cfg.gp_mode = mode;
    Trainer a(cfg), b(cfg);
    const auto ra = run(a, data, 2), rb = run(b, data, 2);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK(same(ra[i], rb[i]));
  }
}

TEST_CASE("non-finite losses abort with the offending term") {
  const PairedSet data = tiny_set();
  for (const auto& [beta, term] : {std::pair{0.0, "generator_loss"}, std::pair{0.01, "critic_fakes"}}) {
    Trainer t(tiny_config(beta));
    auto bias = t.model().parameters().at("encoder2.fc.bias");
    bias.set_value(Tensor<float>(bias.shape(), 500.0f));
    try {
      run(t, data, 1);
      FAIL("expected divergence");
    } catch (const TrainingDivergedError& e) {
      CHECK(e.term() == term);
    }
  }
}

TEST_CASE("train config json") {
  TrainConfig c = tiny_config(0.25);
  c.gp_mode = GpMode::exact;
  CHECK(train_config_from_json(to_json(c)) == c);
  CHECK(train_config_from_json(nlohmann::json::object()) == TrainConfig{});
  CHECK_THROWS_AS(train_config_from_json({{"betta", 0.1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"beta", -1.0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"beta", "high"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"gp_mode", "second-order"}}), ConfigError);
  const TrainConfig d;
  CHECK(d.model.latent_dim == 32);
  CHECK(d.beta == 0.01);
  CHECK(d.lambda_gp == 10.0);
  CHECK(d.lr == 1e-4);
  CHECK(d.weight_decay == 1e-4);
  CHECK(d.batch_size == 16);
  CHECK(d.critic_steps == 1);
  CHECK(d.gp_epsilon == 1e-2);
  CHECK(d.gp_mode == GpMode::directional_fd);
}
