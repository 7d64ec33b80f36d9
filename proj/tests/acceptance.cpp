// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
//   slicegen_acceptance --workdir DIR [--config PATH] [--only N]...

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "op_cases.hpp"
#include "slicegen/body_composition.hpp"
#include "slicegen/checkpoint.hpp"
#include "slicegen/metrics.hpp"
#include "slicegen/parallel.hpp"
#include "slicegen/pgm.hpp"
#include "slicegen/pipeline.hpp"
#include "slicegen/slice_select.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace slicegen;
using testing::uniform_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a sub-check; the criterion fails if any sub-check fails.
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

Image random_image(std::size_t n, Rng& rng) {
  Image im(n, n);
  for (float& p : im.pixels()) p = static_cast<float>(uniform01(rng));
  return im;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.latent_dim = 2;
  c.image_size = 8;
  c.channels = {2, 3, 4};
  return c;
}

// ---- 1: gradients -------------------------------------------------------------

template <typename Real>
void check_catalog(Outcome& out, Rng& rng) {
  double worst = 0.0;
  std::string worst_op;
  std::size_t ops = 0;
  for (const auto& op : testing::op_cases<Real>()) {
    ++ops;
    for (int trial = 0; trial < 20; ++trial) {
      const double e = testing::gradient_check<Real>(op.fn, op.inputs(rng), 1e-3).rel_error;
      if (e > worst) worst = e, worst_op = op.name;
    }
  }
  out.require(worst < 1e-3, std::string(sizeof(Real) == 4 ? "float" : "double") + " " + std::to_string(ops) +
                                " ops x 20 worst rel " + num(worst, 3) + " (" + worst_op + ")");
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  Outcome out;
  Rng rng(2024);
  check_catalog<double>(out, rng);
  check_catalog<float>(out, rng);

  const CSliceGen<double> model(tiny_model(), 7);
  Rng data(8);
  const Tensor<double> cond = uniform_tensor<double>({2, 1, 8, 8}, 0, 1, data);
  Tensor<double> targ = uniform_tensor<double>({2, 1, 8, 8}, 0, 1, data);
  for (double& v : targ.values()) v = v < 0.5 ? 0.0 : 1.0;  // keeps |x - t| off its kink
  const Tensor<double> eps = standard_normal_tensor<double>({2, 2}, data);
  const Tensor<double> prior = standard_normal_tensor<double>({2, 2}, data);
  std::vector<std::string> names;
  std::vector<Tensor<double>> init;
  for (const auto& [name, v] : model.parameters().items()) {
    names.push_back(name);
    init.push_back(v.value());
  }
  for (double beta : {0.0, 0.01}) {
    const double e = testing::gradient_check<double>(
                         [&](const std::vector<Var<double>>& vars) {
                           CSliceGen<double> m(tiny_model(), 7);
                           for (std::size_t i = 0; i < names.size(); ++i) m.parameters().at(names[i]) = vars[i];
                           return generator_losses(m, cond, targ, eps, prior, beta).total;
                         },
                         init, 1e-3)
                         .rel_error;
    out.require(e < 1e-3, "composite K=2 8x8 beta=" + num(beta) + " rel " + num(e, 3));
  }
  const double t = seconds_since(t0);
  out.require(t < 60.0, "runtime " + num(t, 3) + " s");
  return out;
}

// ---- 2: loss arithmetic ---------------------------------------------------------

Outcome criterion_losses() {
  Outcome out;
  Rng rng(12);
  double kl_err = 0.0;
  bool kl_nonneg = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + t % 3, k = 1 + t % 7;
    std::vector<double> mu(n * k), lv(n * k);
    double expected = 0.0;
    for (std::size_t i = 0; i < n * k; ++i) {
      mu[i] = 6 * uniform01(rng) - 3;
      lv[i] = 8 * uniform01(rng) - 4;
      expected += 0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - 1 - lv[i]);
    }
    expected /= double(n);  // summed over latent dims, averaged over the batch
    const double got = kl_loss(GaussianParams<double>{Var<double>::constant(Tensor<double>({n, k}, mu)),
                                                      Var<double>::constant(Tensor<double>({n, k}, lv))})
                           .item();
    kl_err = std::max(kl_err, std::fabs(got - expected));
    kl_nonneg = kl_nonneg && got >= 0.0;
  }
  out.require(kl_err <= 1e-6 && kl_nonneg, "kl 1000 cases max err " + num(kl_err, 3));

  // L1 terms, KL and total against hand arithmetic on the tensors the model produced.
  double l1_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const CSliceGen<double> model(tiny_model(), 100 + t);
    const Tensor<double> cond = uniform_tensor<double>({3, 1, 8, 8}, 0, 1, rng);
    const Tensor<double> targ = uniform_tensor<double>({3, 1, 8, 8}, 0, 1, rng);
    const Tensor<double> eps = standard_normal_tensor<double>({3, 2}, rng);
    const Tensor<double> prior = standard_normal_tensor<double>({3, 2}, rng);
    const double beta = t % 2 ? 0.01 : 0.0;
    const GeneratorLosses<double> g = generator_losses(model, cond, targ, eps, prior, beta);
    double rec = 0, gen = 0;
    for (std::size_t i = 0; i < targ.size(); ++i) {
      rec += std::fabs(targ[i] - g.x_recon.value()[i]);
      gen += std::fabs(targ[i] - g.x_gen.value()[i]);
    }
    rec /= double(targ.size());
    gen /= double(targ.size());
    const double adv = -[&] {
      const Var<double> s = model.critic(
          Var<double>::constant(concat<double>({Var<double>::constant(g.x_gen.value()),
                                                Var<double>::constant(g.x_recon.value())}, 0).value()));
      double m = 0;
      for (double v : s.value().values()) m += v;
      return m / double(s.size());
    }();
    l1_err = std::max({l1_err, std::fabs(g.recon.item() - rec), std::fabs(g.gen.item() - gen),
                       std::fabs(g.adversarial.item() - adv),
                       std::fabs(g.total.item() - (rec + gen + g.kl.item() + beta * adv))});
  }
  out.require(l1_err <= 1e-12, "recon/gen L1, adversarial and total max err " + num(l1_err, 3));

  // Linear critic: scores are <w, x> + b and the gradient norm is ||w|| everywhere.
  double critic_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + t % 3, pix = 16;
    std::vector<double> w(pix);
    for (double& v : w) v = 2 * uniform01(rng) - 1;
    const double b = uniform01(rng);
    const Var<double> wv = Var<double>::constant(Tensor<double>({pix, 1}, w));
    const Var<double> bv = Var<double>::constant(Tensor<double>({1}, std::vector<double>{b}));
    const Critic<double> d = [&](const Var<double>& x) {
      return bias_add(matmul(reshape(x, {x.shape()[0], pix}), wv), bv);
    };
    const Tensor<double> real = uniform_tensor<double>({n, 1, 4, 4}, 0, 1, rng);
    const Tensor<double> fg = uniform_tensor<double>({n, 1, 4, 4}, 0, 1, rng);
    const Tensor<double> fr = uniform_tensor<double>({n, 1, 4, 4}, 0, 1, rng);
    auto score = [&](const Tensor<double>& x, std::size_t i) {
      double s = b;
      for (std::size_t p = 0; p < pix; ++p) s += w[p] * x[i * pix + p];
      return s;
    };
    double mean_real = 0, mean_fake = 0, norm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_real += score(real, i) / double(n);
      mean_fake += (score(fg, i) + score(fr, i)) / double(2 * n);
    }
    for (double v : w) norm += v * v;
    norm = std::sqrt(norm);
    GradientPenaltyOptions opt;
    opt.mode = GpMode::exact;
    opt.lambda = 0.5 + 10 * uniform01(rng);
    const double expected = mean_fake - mean_real + opt.lambda * (norm - 1) * (norm - 1);
    critic_err = std::max(critic_err, std::fabs(critic_loss(d, real, fg, fr, opt, rng).item() - expected));
    opt.lambda = 0;
    critic_err = std::max(critic_err, std::fabs(critic_loss(d, real, fg, fr, opt, rng).item() - (mean_fake - mean_real)));
  }
  out.require(critic_err <= 1e-9, "critic_loss 50 linear critics max err " + num(critic_err, 3));
  return out;
}

// ---- 3: metrics -------------------------------------------------------------------

double mi_oracle(const Image& a, const Image& b, std::size_t bins) {
  std::vector<std::vector<double>> joint(bins, std::vector<double>(bins, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t x = std::min<std::size_t>(bins - 1, std::size_t(std::floor(a.pixels()[i] * bins)));
    const std::size_t y = std::min<std::size_t>(bins - 1, std::size_t(std::floor(b.pixels()[i] * bins)));
    joint[x][y] += 1.0 / double(a.size());
  }
  double mi = 0;
  for (std::size_t x = 0; x < bins; ++x)
    for (std::size_t y = 0; y < bins; ++y) {
      if (joint[x][y] == 0) continue;
      double px = 0, py = 0;
      for (std::size_t k = 0; k < bins; ++k) {
        px += joint[x][k];
        py += joint[k][y];
      }
      mi += joint[x][y] * std::log(joint[x][y] / (px * py));
    }
  return mi;
}

double entropy_oracle(const Image& a, std::size_t bins) {
  std::vector<double> p(bins, 0.0);
  for (float v : a.pixels()) p[std::min<std::size_t>(bins - 1, std::size_t(std::floor(v * bins)))] += 1.0 / a.size();
  double h = 0;
  for (double q : p)
    if (q > 0) h -= q * std::log(q);
  return h;
}

Outcome criterion_metrics() {
  Outcome out;
  Rng rng(3);
  double ident = 0, sym = 0;
  for (int t = 0; t < 50; ++t) {
    const Image a = random_image(16 + t % 17, rng), b = random_image(16 + t % 17, rng);
    ident = std::max(ident, std::fabs(ssim(a, a) - 1.0));
    sym = std::max(sym, std::fabs(ssim(a, b) - ssim(b, a)));
  }
  out.require(ident <= 1e-12, "ssim(x,x)-1 max " + num(ident, 3));
  out.require(sym <= 1e-12, "ssim symmetry max " + num(sym, 3));
  const double c1 = 1e-4;
  const double konst = std::fabs(ssim(Image(16, 16, 0.0f), Image(16, 16, 1.0f)) - c1 / (1 + c1));
  out.require(konst <= 1e-9, "constant images vs C1/(1+C1) err " + num(konst, 3));

  bool psnr_exact = psnr(Image(8, 8, 0.0f), Image(8, 8, 1.0f)) == 0.0;
  for (int t = 0; t < 50; ++t) {
    const Image a = random_image(12, rng), b = random_image(12, rng);
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = double(a.pixels()[i]) - double(b.pixels()[i]);
      mse += d * d;
    }
    mse /= double(a.size());
    psnr_exact = psnr_exact && psnr(a, b) == 10.0 * std::log10(1.0 / mse);
  }
  bool inf_signalled = false;
  try {
    psnr(Image(4, 4, 0.3f), Image(4, 4, 0.3f));
  } catch (const InfinitePsnrError&) {
    inf_signalled = true;
  }
  out.require(psnr_exact && inf_signalled, "psnr == 10 log10(1/MSE) exactly, MSE=0 signalled");

  double mi_err = 0, self_err = 0;
  for (int t = 0; t < 50; ++t) {
    const Image a = random_image(8 + t % 9, rng), b = random_image(8 + t % 9, rng);
    for (std::size_t bins : {4, 16, 32}) {
      mi_err = std::max(mi_err, std::fabs(mutual_information(a, b, bins) - mi_oracle(a, b, bins)));
      self_err = std::max(self_err, std::fabs(mutual_information(a, a, bins) - entropy_oracle(a, bins)));
    }
  }
  out.require(mi_err <= 1e-9, "MI vs brute force max err " + num(mi_err, 3));
  out.require(self_err <= 1e-9, "MI(a,a) vs H(a) max err " + num(self_err, 3));
  return out;
}

// ---- 4: fuzzy c-means ---------------------------------------------------------------

Outcome criterion_fcm() {
  Outcome out;
  Rng rng(77);
  int monotone = 0;
  double row_err = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(40 + 3 * t);
    for (double& v : x) v = uniform01(rng) * (t % 2 ? uniform01(rng) : 1.0);
    FcmConfig cfg;
    cfg.c = 2 + t % 4;
    cfg.seed = std::uint64_t(t);
    const Membership m = fcm_cluster(x, cfg);
    bool ok = true;
    for (std::size_t k = 1; k < m.objective.size(); ++k) ok = ok && m.objective[k] <= m.objective[k - 1] * (1 + 1e-12);
    monotone += ok;
    for (std::size_t i = 0; i < m.n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < m.c; ++j) s += m.at(i, j);
      row_err = std::max(row_err, std::fabs(s - 1.0));
    }
  }
  out.require(monotone == 100, "objective non-increasing on " + std::to_string(monotone) + "/100 datasets");
  out.require(row_err <= 1e-9, "row sums max err " + num(row_err, 3));

  double worst = 0;
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int t = 0; t < 20; ++t) {
    const double lo = 0.1 + 0.2 * uniform01(rng), hi = lo + 0.4 + 0.2 * uniform01(rng);
    std::vector<double> x;
    for (int i = 0; i < 150; ++i) x.push_back(lo + noise(rng));
    for (int i = 0; i < 100; ++i) x.push_back(hi + noise(rng));
    FcmConfig cfg;
    cfg.c = 2;
    const Membership m = fcm_cluster(x, cfg);
    worst = std::max({worst, std::fabs(m.centroids[0] - lo), std::fabs(m.centroids[1] - hi)});
  }
  out.require(worst <= 0.02, "two-cluster recovery worst centroid error " + num(worst, 3));
  return out;
}

// ---- 5: additivity and beta = 0 -------------------------------------------------------

struct DeskRun {
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  RunConfig config;
  DataIndex index;
  std::vector<double> epoch_gen;  // mean L_gen per epoch
  fs::path run_dir;
  std::optional<CSliceGen<float>> model;
};

TrainConfig tiny_train(double beta) {
  TrainConfig c;
  c.model = tiny_model();
  c.beta = beta;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 3;
  c.lr = 1e-3;
  c.max_shift = 1;
  return c;
}

PairedSet tiny_pairs() {
  std::vector<SubjectProfile> s;
  for (int i = 0; i < 3; ++i) s.push_back(make_profile(i, 4));
  return make_paired_set(s, level_grid(3), 0.5, PhantomConfig{8, 4.0});
}

bool same_params(const ParameterSet<float>& a, const ParameterSet<float>& b, const std::string& prefix, bool match) {
  for (const auto& [name, v] : a.items()) {
    if ((name.rfind(prefix, 0) == 0) != match) continue;
    if (!(v.value() == b.at(name).value())) return false;
  }
  return true;
}

Outcome criterion_additivity(const DeskRun& desk) {
  Outcome out;
  if (!desk.ok) {
    out.require(false, "desk run failed: " + desk.error);
    return out;
  }
  // Every row of the desk run's loss trace.
  std::ifstream in(desk.run_dir / "loss_trace.csv");
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  double worst = 0;
  const double beta = desk.config.train.beta;
  while (std::getline(in, line)) {
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(std::stod(cell));
    // epoch, step, recon, gen, kl, critic, adversarial, total
    worst = std::max(worst, std::fabs(f[7] - (f[2] + f[3] + f[4] + beta * f[6])));
    ++rows;
  }
  out.require(rows > 0 && worst <= 1e-5,
              std::to_string(rows) + " logged desk steps, max |total - sum| " + num(worst, 3));

  // In-memory reports at several betas.
  const PairedSet data = tiny_pairs();
  double worst_mem = 0;
  for (double b : {0.0, 0.01, 0.5}) {
    Trainer t(tiny_train(b));
    for (int e = 0; e < 2; ++e)
      for (const auto& r : t.train_epoch(data, e))
        worst_mem = std::max(worst_mem, std::fabs(r.total - (r.recon + r.gen + r.kl + b * r.adversarial)));
  }
  out.require(worst_mem <= 1e-5, "beta in {0, 0.01, 0.5} reports max err " + num(worst_mem, 3));

  Trainer a(tiny_train(0.0));
  const CSliceGen<float> before = a.model();
  std::vector<LossReport> ra;
  for (int e = 0; e < 2; ++e)
    for (const auto& r : a.train_epoch(data, e)) ra.push_back(r);
  const bool critic_untouched = same_params(a.model().parameters(), before.parameters(), "critic.", true) &&
                                a.critic_optimizer().steps() == 0;
  out.require(critic_untouched, "beta=0 leaves critic parameters and optimizer untouched");

  CSliceGen<float> reinit = before;
  reinit.init_critic(999);
  Trainer b(tiny_train(0.0), reinit);
  std::vector<LossReport> rb;
  for (int e = 0; e < 2; ++e)
    for (const auto& r : b.train_epoch(data, e)) rb.push_back(r);
  bool same_trace = ra.size() == rb.size();
  for (std::size_t i = 0; same_trace && i < ra.size(); ++i)
    same_trace = ra[i].recon == rb[i].recon && ra[i].gen == rb[i].gen && ra[i].kl == rb[i].kl &&
                 ra[i].total == rb[i].total;
  const bool same_gen = same_params(a.model().parameters(), b.model().parameters(), "critic.", false);
  out.require(same_gen && same_trace, "beta=0 generator weights bitwise independent of critic init");
  return out;
}

// ---- 6: desk-scale training ----------------------------------------------------------

DeskRun desk_run(const RunConfig& config, const fs::path& workdir) {
  DeskRun d;
  d.config = config;
  d.run_dir = workdir / "run";
  const auto t0 = Clock::now();
  try {
    fs::remove_all(workdir);
    d.index = generate_dataset(config, workdir / "data");
    const PairedSet data = load_training_pairs(d.index, config.phantom.target_level, nullptr);
    run_training(config, data, d.run_dir, false, [&](int epoch, const LossReport& m) {
      d.epoch_gen.push_back(m.gen);
      std::fprintf(stderr, "  desk epoch %d gen %.5f (%.0f s)\n", epoch, m.gen, seconds_since(t0));
    });
    d.model = load_model(load_checkpoint(d.run_dir / "latest.csg"));
    d.ok = true;
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = seconds_since(t0);
  return d;
}

Outcome criterion_desk(const DeskRun& desk) {
  Outcome out;
  if (!desk.ok) {
    out.require(false, "desk run failed: " + desk.error);
    return out;
  }
  const auto t0 = Clock::now();
  const RunConfig& c = desk.config;
  out.require(c.phantom.train_subjects == 200 && c.phantom.image_size == 32 && c.train.model.latent_dim == 32 &&
                  c.train.epochs == 30 && c.train.beta == 0.01,
              "200 subjects, 32x32, K=32, 30 epochs, beta=0.01");
  const double first = desk.epoch_gen.front(), last = desk.epoch_gen.back();
  out.require(last <= 0.5 * first, "(a) L_gen first " + num(first) + " final " + num(last) + " ratio " +
                                       num(last / first, 3));

  const std::vector<EvalRow> rows = evaluate_index(*desk.model, desk.index, c.phantom.target_level, c.train.seed, c.ssim);
  const EvalSummary s = summarize(rows);
  out.require(s.median_ssim_gain >= 0.05, "(b) held-out median SSIM generated " + num(s.median_ssim_generated) +
                                              " copy " + num(s.median_ssim_copy) + " gain " +
                                              num(s.median_ssim_gain, 3));

  const Trainer untrained(c.train);
  const std::vector<EvalRow> base = evaluate_index(untrained.model(), desk.index, c.phantom.target_level, c.train.seed, c.ssim);
  double l1_trained = 0, l1_untrained = 0;
  for (const auto& r : rows) l1_trained += r.l1_generated / double(rows.size());
  for (const auto& r : base) l1_untrained += r.l1_generated / double(base.size());
  out.require(l1_trained <= 0.5 * l1_untrained, "(c) L1 trained " + num(l1_trained) + " untrained " +
                                                    num(l1_untrained) + " reduction " +
                                                    num(100 * (1 - l1_trained / l1_untrained), 3) + "%");
  const double total = desk.seconds + seconds_since(t0);
  out.require(total < 1800.0, "runtime " + num(total, 4) + " s");
  return out;
}

// ---- 7: target selection ----------------------------------------------------------------

Outcome criterion_selection(const RunConfig& c) {
  Outcome out;
  const PhantomConfig render{c.phantom.image_size, c.phantom.pixel_area};
  const std::vector<double> grid = level_grid(c.phantom.levels);
  const double target = c.phantom.target_level;

  std::vector<Image> train_images;
  std::vector<double> train_levels;
  for (const auto& p : train_profiles(c.phantom))
    for (double v : grid) {
      train_images.push_back(render_slice(p, v, render).image);
      train_levels.push_back(v);
    }
  RegressorConfig rc = c.regressor;
  const LevelRegressor reg = train_level_regressor(train_images, train_levels, rc);

  const Image reference = render_slice(reference_profile(), target, render).image;
  const auto tests = test_profiles(c.phantom);
  const std::size_t subjects = std::min<std::size_t>(50, tests.size());
  int mi_hits = 0, agree = 0;
  double mae = 0;
  std::size_t held_out = 0;
  for (std::size_t i = 0; i < subjects; ++i) {
    std::vector<Image> sweep;
    for (double v : grid) sweep.push_back(render_slice(tests[i], v, render).image);
    const double mi_level = grid[select_target_mi(sweep, reference, c.mi_bins)];
    const double bpr_level = grid[select_target_bpr(sweep, reg, target)];
    mi_hits += std::fabs(mi_level - target) <= 0.1 + 1e-9;
    agree += std::fabs(mi_level - bpr_level) <= 0.1 + 1e-9;
    for (std::size_t k = 0; k < grid.size(); ++k, ++held_out) mae += std::fabs(reg.predict(sweep[k]) - grid[k]);
  }
  mae /= double(held_out);
  out.require(subjects == 50 && mi_hits >= 45, "MI within 0.1 of target on " + std::to_string(mi_hits) + "/" +
                                                   std::to_string(subjects));
  out.require(mae < 0.05, "regressor held-out MAE " + num(mae, 3) + " over " + std::to_string(held_out) + " slices");
  out.require(agree >= 40, "selectors agree within 0.1 on " + std::to_string(agree) + "/" + std::to_string(subjects));
  return out;
}

// ---- 8: harmonization -------------------------------------------------------------------

Outcome criterion_harmonization(const DeskRun& desk) {
  Outcome out;
  if (!desk.ok) {
    out.require(false, "desk run failed: " + desk.error);
    return out;
  }
  const auto t0 = Clock::now();
  const RunConfig& c = desk.config;
  const Cohort cohort = harmonization_cohort(c.phantom);
  HarmonizeConfig h;
  h.phantom = {c.phantom.image_size, c.phantom.pixel_area};
  h.fcm = c.fcm;
  h.band = c.band;
  h.seed = c.train.seed;
  h.threads = default_thread_count();
  const HarmonizationReport r = harmonize_cohort(cohort, *desk.model, h);
  out.require(cohort.subjects.size() == 20 && cohort.visit_levels.front().size() == 3 && c.phantom.level_jitter == 0.15,
              "20 subjects x 3 visits, sigma_v 0.15");
  out.require(r.muscle_ratio && *r.muscle_ratio < 0.7,
              "muscle median reduction ratio " + (r.muscle_ratio ? num(*r.muscle_ratio, 3) : std::string("n/a")));
  out.require(r.visceral_ratio && *r.visceral_ratio < 0.8,
              "visceral fat median reduction ratio " +
                  (r.visceral_ratio ? num(*r.visceral_ratio, 3) : std::string("n/a")));
  const double t = seconds_since(t0);
  out.require(t < 300.0, "runtime " + num(t, 3) + " s");
  return out;
}

// ---- 9: reproducibility -------------------------------------------------------------------

Outcome criterion_reproducibility(const DeskRun& desk, const RunConfig& base, const fs::path& workdir) {
  Outcome out;
  if (desk.ok) {
    const std::string bytes = read_file(desk.run_dir / "latest.csg");
    const Checkpoint ck = decode_checkpoint(bytes);
    const CSliceGen<float> m = load_model(ck);
    bool params_equal = true;
    for (const auto& [name, v] : m.parameters().items()) {
      const auto& a = v.value().values();
      const auto& b = desk.model->parameters().at(name).value().values();
      params_equal = params_equal && a.size() == b.size() &&
                     std::equal(a.begin(), a.end(), b.begin(), [](float x, float y) {
                       return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                     });
    }
    out.require(encode_checkpoint(ck) == bytes && params_equal, "desk checkpoint decode/encode round trip bit-exact");
  } else {
    out.require(false, "desk run failed: " + desk.error);
  }

  // Two identical small runs.
  RunConfig c = base;
  c.phantom.train_subjects = 20;
  c.phantom.test_subjects = 5;
  c.phantom.cohort_subjects = 2;
  c.train.epochs = 2;
  std::vector<std::string> traces, checkpoints;
  std::vector<std::vector<Image>> images;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = workdir / ("repro_" + std::to_string(rep));
    fs::remove_all(dir);
    const DataIndex index = generate_dataset(c, dir / "data");
    run_training(c, load_training_pairs(index, c.phantom.target_level, nullptr), dir / "run", false);
    traces.push_back(read_file(dir / "run" / "loss_trace.csv"));
    checkpoints.push_back(read_file(dir / "run" / "latest.csg"));
    const CSliceGen<float> m = load_model(load_checkpoint(dir / "run" / "latest.csg"));
    std::vector<Image> cond;
    for (const auto* s : index.split("test")) cond.push_back(read_pgm(index.root / s->slices.front().image));
    Rng rng(c.train.seed);
    images.push_back(generate(m, cond, rng));
  }
  out.require(traces[0] == traces[1], "loss traces identical (" + std::to_string(traces[0].size()) + " bytes)");
  out.require(checkpoints[0] == checkpoints[1], "checkpoints identical");
  out.require(images[0] == images[1], "generated images identical");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slicegen acceptance run"};
  std::string workdir = "acceptance_work";
  std::string config_path = SLICEGEN_DEFAULT_CONFIG;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--config", config_path, "run config for the desk-scale criteria");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int k) { return wanted.empty() || wanted.count(k) > 0; };

  RunConfig config = load_run_config(config_path);
  fs::create_directories(workdir);

  std::optional<DeskRun> desk;
  auto desk_result = [&]() -> const DeskRun& {
    if (!desk) desk = desk_run(config, fs::path(workdir) / "desk");
    return *desk;
  };

  const char* names[] = {"",
                         "gradient checks",
                         "loss arithmetic",
                         "metric identities",
                         "fuzzy c-means",
                         "loss additivity and beta=0",
                         "desk-scale training",
                         "target selection",
                         "harmonization",
                         "reproducibility"};
  int failures = 0;
  for (int k = 1; k <= 9; ++k) {
    if (!want(k)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      switch (k) {
        case 1: o = criterion_gradients(); break;
        case 2: o = criterion_losses(); break;
        case 3: o = criterion_metrics(); break;
        case 4: o = criterion_fcm(); break;
        case 5: o = criterion_additivity(desk_result()); break;
        case 6: o = criterion_desk(desk_result()); break;
        case 7: o = criterion_selection(config); break;
        case 8: o = criterion_harmonization(desk_result()); break;
        case 9: o = criterion_reproducibility(desk_result(), config, workdir); break;
      }
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k, names[k], o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
