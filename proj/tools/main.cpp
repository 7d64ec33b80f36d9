// slicegen command-line tool. Every subcommand works inside one work directory
// (--out, default from the config); see README for the file layout.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "slicegen/checkpoint.hpp"
#include "slicegen/error.hpp"
#include "slicegen/parallel.hpp"
#include "slicegen/pgm.hpp"
#include "slicegen/pipeline.hpp"
#include "slicegen/random.hpp"

namespace fs = std::filesystem;
using namespace slicegen;

namespace {

constexpr std::uint64_t kGenerateStream = 0x67656e65;  // "gene"

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kCheckpoint = 4, kData = 5, kDiverged = 6 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta;
  std::optional<int> epochs;
  std::optional<std::string> out;
  std::optional<double> target_level;
  std::optional<std::string> select;
  std::optional<std::string> gp_mode;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run config (defaults below when omitted)");
    app->add_option("--seed", seed, "training / sampling seed");
    app->add_option("--beta", beta, "adversarial weight");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--out", out, "work directory");
    app->add_option("--target-level", target_level, "target level in [0, 1]");
    app->add_option("--select", select, "target selection method")->check(CLI::IsMember({"mi", "bpr"}));
    app->add_option("--gp-mode", gp_mode, "gradient penalty mode")->check(CLI::IsMember({"fd", "exact"}));
  }

  // Flags win over the file.
  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.train.seed = *seed;
    if (beta) c.train.beta = *beta;
    if (epochs) c.train.epochs = *epochs;
    if (out) c.workdir = *out;
    if (target_level) c.phantom.target_level = *target_level;
    if (select) c.select = *select;
    if (gp_mode) c.train.gp_mode = parse_gp_mode(*gp_mode);
    c.validate();
    return c;
  }
};

fs::path checkpoint_or_latest(const std::string& given, const RunConfig& c) {
  return given.empty() ? fs::path(c.workdir) / "run" / "latest.csg" : fs::path(given);
}

int cmd_gen_data(const RunConfig& c) {
  const DataIndex index = generate_dataset(c, fs::path(c.workdir) / "data");
  std::printf("wrote %zu subjects to %s\n", index.subjects.size(), (fs::path(c.workdir) / "data").c_str());
  return kOk;
}

int cmd_select(const RunConfig& c) {
  const Selection s = select_targets(c, load_index(fs::path(c.workdir) / "data"));
  write_json(fs::path(c.workdir) / "selection.json", to_json(s));
  std::size_t hits = 0;
  for (const auto& e : s.entries) hits += std::abs(e.level - s.target_level) <= 0.1 + 1e-9;
  std::printf("method=%s subjects=%zu within_0.1=%zu\n", s.method.c_str(), s.entries.size(), hits);
  return kOk;
}

int cmd_train(const RunConfig& c, bool resume, bool use_selection) {
  const DataIndex index = load_index(fs::path(c.workdir) / "data");
  std::optional<Selection> selection;
  if (use_selection) selection = selection_from_json(read_json(fs::path(c.workdir) / "selection.json"));
  const PairedSet data = load_training_pairs(index, c.phantom.target_level, selection ? &*selection : nullptr);
  const TrainingRun run =
      run_training(c, data, fs::path(c.workdir) / "run", resume, [](int epoch, const LossReport& m) {
        std::printf("epoch %d recon=%.6f gen=%.6f kl=%.6f critic=%.6f adversarial=%.6f total=%.6f\n", epoch, m.recon,
                    m.gen, m.kl, m.critic, m.adversarial, m.total);
        std::fflush(stdout);
      });
  std::printf("trained epochs %d..%d, latest %s\n", run.first_epoch, run.first_epoch + run.epochs_done - 1,
              run.latest.c_str());
  return kOk;
}

int cmd_generate(const RunConfig& c, const std::string& ckpt, const std::vector<std::string>& inputs) {
  const CSliceGen<float> model = load_model(load_checkpoint(checkpoint_or_latest(ckpt, c)));
  Rng rng(derive_seed(c.train.seed, {kGenerateStream}));
  const fs::path dir = fs::path(c.workdir) / "generated";
  for (const std::string& in : inputs) {
    const std::vector<Image> cond{read_pgm(in)};
    const Image out = generate(model, std::span<const Image>(cond), rng).front();
    const fs::path path = dir / (fs::path(in).stem().string() + "_generated.pgm");
    write_pgm(path, out);
    std::printf("%s\n", path.c_str());
  }
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::string& ckpt) {
  const CSliceGen<float> model = load_model(load_checkpoint(checkpoint_or_latest(ckpt, c)));
  const DataIndex index = load_index(fs::path(c.workdir) / "data");
  const std::vector<EvalRow> rows = evaluate_index(model, index, c.phantom.target_level, c.train.seed, c.ssim);
  write_eval(fs::path(c.workdir) / "eval", rows);
  const EvalSummary s = summarize(rows);
  std::printf("subjects=%zu median_ssim_generated=%.4f median_ssim_copy=%.4f median_gain=%.4f\n", s.subjects,
              s.median_ssim_generated, s.median_ssim_copy, s.median_ssim_gain);
  return kOk;
}

int cmd_harmonize(const RunConfig& c, const std::string& ckpt, bool masks) {
  const CSliceGen<float> model = load_model(load_checkpoint(checkpoint_or_latest(ckpt, c)));
  HarmonizeConfig h;
  h.phantom = {c.phantom.image_size, c.phantom.pixel_area};
  h.fcm = c.fcm;
  h.band = c.band;
  h.seed = c.train.seed;
  h.threads = default_thread_count();
  std::vector<VisitArtifacts> artifacts;
  const HarmonizationReport r =
      harmonize_cohort(harmonization_cohort(c.phantom), model, h, masks ? &artifacts : nullptr);
  write_harmonization(fs::path(c.workdir) / "harmonize", r, masks ? &artifacts : nullptr);
  auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
  std::printf("muscle_ratio=%s visceral_fat_ratio=%s\n", show(r.muscle_ratio).c_str(),
              show(r.visceral_ratio).c_str());
  return kOk;
}

int fail(int code, const char* name, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat)
    if (ch == '\n') ch = ' ';
  std::fprintf(stderr, "error: code=%s message=%s\n", name, flat.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional slice generation on synthetic abdominal phantoms"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 internal, 2 usage/config, 3 file I/O, 4 checkpoint, 5 data/domain, "
             "6 training diverged.\nSLICEGEN_THREADS caps worker threads.\n\nDefault config:\n" +
             to_json(RunConfig{}).dump(2));

  Overrides ov;
  std::string checkpoint;
  std::vector<std::string> inputs;
  bool resume = false, use_selection = false, masks = false;

  auto* gen_data = app.add_subcommand("gen-data", "render train/test/cohort phantoms into <out>/data");
  auto* train = app.add_subcommand("train", "train on <out>/data, writing <out>/run");
  auto* generate = app.add_subcommand("generate", "synthesize target-level slices for PGM inputs");
  auto* eval = app.add_subcommand("eval", "held-out SSIM/PSNR against the copy baseline");
  auto* select = app.add_subcommand("select-target", "pick each train subject's target slice");
  auto* harmonize = app.add_subcommand("harmonize", "longitudinal area spread, original vs generated");
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint's JSON header");
  for (auto* sub : {gen_data, train, generate, eval, select, harmonize, inspect}) ov.attach(sub);
  train->add_flag("--resume", resume, "continue from <out>/run/latest.csg");
  train->add_flag("--use-selection", use_selection, "targets from <out>/selection.json");
  for (auto* sub : {generate, eval, harmonize, inspect})
    sub->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/run/latest.csg)");
  generate->add_option("--input", inputs, "conditional PGM images")->required()->check(CLI::ExistingFile);
  harmonize->add_flag("--masks", masks, "also write per-visit images and masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", e.what());
  }

  try {
    const RunConfig c = ov.resolve();
    if (*gen_data) return cmd_gen_data(c);
    if (*train) return cmd_train(c, resume, use_selection);
    if (*generate) return cmd_generate(c, checkpoint, inputs);
    if (*eval) return cmd_eval(c, checkpoint);
    if (*select) return cmd_select(c);
    if (*harmonize) return cmd_harmonize(c, checkpoint, masks);
    std::fputs(read_checkpoint_header(checkpoint_or_latest(checkpoint, c)).c_str(), stdout);
    std::fputc('\n', stdout);
    return kOk;
  } catch (const ConfigError& e) {
    return fail(kUsage, "config", e.what());
  } catch (const CheckpointError& e) {
    return fail(kCheckpoint, "checkpoint", e.what());
  } catch (const IoError& e) {
    return fail(kIo, "io", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kIo, "io", e.what());
  } catch (const TrainingDivergedError& e) {
    return fail(kDiverged, "diverged", e.what());
  } catch (const LoadError& e) {
    return fail(kData, "data", e.what());
  } catch (const DomainError& e) {
    return fail(kData, "domain", e.what());
  } catch (const DimensionError& e) {
    return fail(kData, "dimension", e.what());
  } catch (const DegenerateInputError& e) {
    return fail(kData, "degenerate", e.what());
  } catch (const InfinitePsnrError& e) {
    return fail(kData, "infinite_psnr", e.what());
  } catch (const std::exception& e) {
    return fail(kOther, "internal", e.what());
  }
}
