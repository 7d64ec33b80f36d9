#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "slicegen/checkpoint.hpp"
#include "slicegen/pgm.hpp"
#include "slicegen/pipeline.hpp"

using namespace slicegen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig small_config() {
  RunConfig c;
  c.train.model.image_size = 16;
  c.train.model.latent_dim = 4;
  c.train.model.channels = {2, 3, 4};
  c.train.batch_size = 8;
  c.train.epochs = 2;
  c.train.lr = 1e-3;
  c.phantom.image_size = 16;
  c.regressor.image_size = 16;
  c.regressor.epochs = 1;
  c.ssim.window = 7;
  c.phantom.train_subjects = 3;
  c.phantom.test_subjects = 2;
  c.phantom.cohort_subjects = 2;
  c.phantom.levels = 5;
  c.phantom.visits = 2;
  return c;
}

}  // namespace

TEST_CASE("run config json round trip and strictness") {
  const RunConfig c = small_config();
  const nlohmann::json j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);

  CHECK(run_config_from_json(nlohmann::json::object()).train.model.latent_dim == 32);
  for (const char* bad : {R"({"phantom": {"levles": 3}})", R"({"fcm": {"c": 2, "q": 1}})", R"({"x": 1})",
                          R"({"metrics": {"mi_bins": 1}})", R"({"select": {"method": "nearest"}})",
                          R"({"phantom": {"target_level": 1.5}})", R"({"train": {"epochs": "ten"}})",
                          R"({"phantom": {"image_size": 16}})", R"([1, 2])"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(bad)), ConfigError);
  }
  // The phantom follows the model's image size unless set explicitly.
  const RunConfig follow = run_config_from_json(nlohmann::json::parse(R"({"train": {"image_size": 16}})"));
  CHECK(follow.phantom.image_size == 16);
  CHECK(follow.regressor.image_size == 16);
}

TEST_CASE("read_json maps parse failures to ConfigError") {
  TempDir dir("slicegen_pipeline_json");
  write_file_atomic(dir.path / "bad.json", "{ not json");
  CHECK_THROWS_AS(read_json(dir.path / "bad.json"), ConfigError);
  CHECK_THROWS_AS(read_json(dir.path / "missing.json"), IoError);
}

TEST_CASE("profiles and cohort are reproducible and disjoint") {
  const PhantomSettings p = small_config().phantom;
  CHECK(train_profiles(p) == train_profiles(p));
  CHECK(test_profiles(p).front().subject_id == kTestSubjectBase);
  CHECK(harmonization_cohort(p) == harmonization_cohort(p));
  CHECK(harmonization_cohort(p).visit_levels.front().size() == 2);
  const SubjectProfile r = reference_profile();
  CHECK_NOTHROW(validate(r));
}

TEST_CASE("dataset index round trip and training pairs") {
  TempDir dir("slicegen_pipeline_data");
  const RunConfig c = small_config();
  const DataIndex written = generate_dataset(c, dir.path / "data");
  const DataIndex index = load_index(dir.path / "data");
  REQUIRE(index.subjects.size() == written.subjects.size());
  CHECK(index.split("train").size() == 3);
  CHECK(index.split("test").size() == 2);
  CHECK(index.split("cohort").size() == 2);
  const IndexedSubject& s = *index.split("train")[1];
  CHECK(s.slices.size() == 5);
  CHECK(s.slices[2].level == 0.5);
  CHECK(nearest_level(s, 0.5) == 2);
  CHECK(nearest_level(s, 0.6) == 2);

  // Files on disk match a fresh render, to 8-bit precision.
  const PhantomSlice fresh = render_slice(train_profiles(c.phantom)[1], 0.25, {16, 4.0});
  const Image stored = read_pgm(index.root / s.slices[1].image);
  for (std::size_t i = 0; i < stored.size(); ++i) CHECK(std::fabs(stored.pixels()[i] - fresh.image.pixels()[i]) <= 0.5 / 255 + 1e-6);
  CHECK(read_pgm_mask(index.root / s.slices[1].muscle) == fresh.muscle);

  const PairedSet pairs = load_training_pairs(index, 0.5, nullptr);
  CHECK(pairs.size() == 15);
  CHECK(pairs.targets[0] == pairs.conditionals[2]);

  Selection sel;
  sel.method = "manual";
  for (const IndexedSubject* t : index.split("train")) sel.entries.push_back({t->subject_id, 3, 0.75, "", 0.0});
  const Selection back = selection_from_json(to_json(sel));
  CHECK(back.entries.size() == 3);
  CHECK(load_training_pairs(index, 0.5, &back).targets[0] == pairs.conditionals[3]);
  sel.entries.pop_back();
  CHECK_THROWS_AS(load_training_pairs(index, 0.5, &sel), LoadError);
  CHECK_THROWS_AS(load_index(dir.path / "nowhere"), IoError);

  RunConfig mi = c;
  const Selection chosen = select_targets(mi, index);
  CHECK(chosen.entries.size() == 3);
  mi.select = "bpr";
  CHECK(select_targets(mi, index).method == "bpr");
}

TEST_CASE("training run writes traces and checkpoints, and resumes exactly") {
  TempDir dir("slicegen_pipeline_train");
  const RunConfig c = small_config();
  const DataIndex index = generate_dataset(c, dir.path / "data");
  const PairedSet pairs = load_training_pairs(index, 0.5, nullptr);

  int seen = 0;
  const TrainingRun full = run_training(c, pairs, dir.path / "full", false, [&](int, const LossReport&) { ++seen; });
  CHECK(seen == 2);
  CHECK(full.epochs_done == 2);
  CHECK(fs::exists(dir.path / "full" / "checkpoints" / "epoch_000.csg"));
  CHECK(fs::exists(dir.path / "full" / "checkpoints" / "epoch_001.csg"));
  CHECK(read_file(dir.path / "full" / "latest.csg") == read_file(dir.path / "full" / "checkpoints" / "epoch_001.csg"));
  const std::string trace = read_file(dir.path / "full" / "loss_trace.csv");
  const std::size_t steps = Trainer(c.train).steps_per_epoch(pairs.size());
  CHECK(std::size_t(std::count(trace.begin(), trace.end(), '\n')) == 1 + 2 * steps);
  CHECK(trace.rfind(loss_trace_header(), 0) == 0);

  // One epoch, then resume to two.
  RunConfig first = c;
  first.train.epochs = 1;
  run_training(first, pairs, dir.path / "split", false);
  const TrainingRun rest = run_training(c, pairs, dir.path / "split", true);
  CHECK(rest.first_epoch == 1);
  CHECK(rest.epochs_done == 1);
  CHECK(read_file(dir.path / "split" / "loss_trace.csv") == trace);
  CHECK(read_file(dir.path / "split" / "latest.csg") == read_file(dir.path / "full" / "latest.csg"));

  RunConfig other = c;
  other.train.beta = 0.5;
  CHECK_THROWS_AS(run_training(other, pairs, dir.path / "split", true), ConfigError);
}

TEST_CASE("evaluation rows and summary") {
  TempDir dir("slicegen_pipeline_eval");
  const RunConfig c = small_config();
  const DataIndex index = generate_dataset(c, dir.path / "data");
  const CSliceGen<float> model(c.train.model, 1);
  const auto rows = evaluate_index(model, index, 0.5, 7, c.ssim);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].subject_id == kTestSubjectBase);
  CHECK(rows == evaluate_index(model, index, 0.5, 7, c.ssim));
  write_eval(dir.path / "eval", rows);
  const std::string csv = read_file(dir.path / "eval" / "metrics.csv");
  CHECK(csv.rfind("subject_id,ssim_generated,psnr_generated,ssim_copy_baseline,psnr_copy_baseline\n", 0) == 0);
  const auto summary = read_json(dir.path / "eval" / "summary.json");
  CHECK(summary["subjects"] == 2);

  std::vector<EvalRow> r(3);
  r[0].ssim_generated = 0.5, r[0].ssim_copy = 0.4;
  r[1].ssim_generated = 0.9, r[1].ssim_copy = 0.3;
  r[2].ssim_generated = 0.2, r[2].ssim_copy = 0.3;
  const EvalSummary s = summarize(r);
  CHECK(s.median_ssim_generated == 0.5);
  CHECK(s.median_ssim_copy == 0.3);
  CHECK(s.median_ssim_gain == doctest::Approx(0.1));
}
