#pragma once

// File-level workflow shared by the command-line tool and the Python module.
//
// Everything lives under one work directory:
//   data/index.json, data/reference.pgm, data/<split>/s<id>/...   gen-data
//   selection.json                                                  select-target
//   run/config.json, run/loss_trace.csv, run/checkpoints/epoch_NNN.csg, run/latest.csg
//   eval/metrics.csv, eval/summary.json
//   generated/<stem>_generated.pgm
//   harmonize/report.csv, harmonize/summary.json, harmonize/masks/*.pgm

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicegen/body_composition.hpp"
#include "slicegen/metrics.hpp"
#include "slicegen/slice_select.hpp"
#include "slicegen/train.hpp"

namespace slicegen {

struct PhantomSettings {
  std::size_t image_size = 32;
  double pixel_area = 4.0;
  int train_subjects = 200;
  int test_subjects = 50;
  int levels = 11;            // sweep rendered per train/test subject
  int cohort_subjects = 20;   // longitudinal cohort for harmonization
  int visits = 3;
  double level_jitter = 0.15;
  std::uint64_t cohort_seed = 0;
  double target_level = 0.5;
};

struct RunConfig {
  TrainConfig train;
  PhantomSettings phantom;
  SsimConfig ssim;
  std::size_t mi_bins = 16;
  std::string select = "mi";  // or "bpr"
  RegressorConfig regressor;
  FcmConfig fcm;
  MuscleBand band;
  std::string workdir = "slicegen_out";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Sections may be omitted; unknown keys at any level raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Subject ids: train 0..n-1, test 100000+i; the harmonization cohort draws
/// its own profiles from a seed derived from cohort_seed.
inline constexpr int kTestSubjectBase = 100000;
std::vector<SubjectProfile> train_profiles(const PhantomSettings& p);
std::vector<SubjectProfile> test_profiles(const PhantomSettings& p);
Cohort harmonization_cohort(const PhantomSettings& p);
/// Reference subject for mutual-information selection: the centre of every profile range.
SubjectProfile reference_profile();

struct IndexedSlice {
  int visit = 0;
  double level = 0.0;
  std::string image;  // relative to the data directory
  std::string body, inner_wall, muscle, adipose;
};

struct IndexedSubject {
  int subject_id = 0;
  std::string split;  // train | test | cohort
  std::vector<IndexedSlice> slices;
};

struct DataIndex {
  std::filesystem::path root;  // data directory, not serialized
  std::size_t image_size = 32;
  double pixel_area = 4.0;
  double target_level = 0.5;
  std::string reference;
  std::vector<IndexedSubject> subjects;

  std::vector<const IndexedSubject*> split(const std::string& name) const;
};

DataIndex generate_dataset(const RunConfig& config, const std::filesystem::path& data_dir);
DataIndex load_index(const std::filesystem::path& data_dir);

/// Slice whose level is closest to `level`; ties go to the earlier slice.
std::size_t nearest_level(const IndexedSubject& subject, double level);

struct Selection {
  std::string method;
  double target_level = 0.5;
  struct Entry {
    int subject_id = 0;
    std::size_t slice = 0;
    double level = 0.0;
    std::string image;
    double score = 0.0;  // MI in nats, or predicted level for bpr
  };
  std::vector<Entry> entries;
};

nlohmann::json to_json(const Selection& selection);
Selection selection_from_json(const nlohmann::json& j);
Selection select_targets(const RunConfig& config, const DataIndex& index);

/// Pairs every slice of each train subject with that subject's target slice
/// (from `selection` when given, otherwise the slice nearest target_level).
PairedSet load_training_pairs(const DataIndex& index, double target_level, const Selection* selection);

struct TrainingRun {
  int first_epoch = 0;  // 0 unless resumed
  int epochs_done = 0;
  std::filesystem::path latest;
};

/// Trains into <workdir>/run. With `resume`, continues after the epoch stored in
/// run/latest.csg; the stored train config must match.
TrainingRun run_training(const RunConfig& config, const PairedSet& data, const std::filesystem::path& run_dir,
                         bool resume, const std::function<void(int epoch, const LossReport& mean)>& on_epoch = {});

std::string loss_trace_header();
std::string loss_trace_row(const LossReport& r);

struct EvalRow {
  int subject_id = 0;
  double ssim_generated = 0.0, psnr_generated = 0.0;
  double ssim_copy = 0.0, psnr_copy = 0.0;
  double l1_generated = 0.0, l1_copy = 0.0;
  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

/// Per-conditional metrics averaged over the subject's conditionals.
EvalRow evaluate_subject(const CSliceGen<float>& model, int subject_id, std::span<const Image> conditionals,
                         const Image& target, std::uint64_t seed, const SsimConfig& ssim_config = {});

struct EvalSummary {
  std::size_t subjects = 0;
  double median_ssim_generated = 0.0, median_ssim_copy = 0.0;
  double median_psnr_generated = 0.0, median_psnr_copy = 0.0;
  double median_ssim_gain = 0.0;  // median over subjects of per-subject gain
};
EvalSummary summarize(std::span<const EvalRow> rows);

/// Held-out evaluation over the test split: the slice nearest target_level is
/// the target and every other slice a conditional.
std::vector<EvalRow> evaluate_index(const CSliceGen<float>& model, const DataIndex& index, double target_level,
                                    std::uint64_t seed, const SsimConfig& ssim_config = {});
void write_eval(const std::filesystem::path& dir, std::span<const EvalRow> rows);

void write_harmonization(const std::filesystem::path& dir, const HarmonizationReport& report,
                         const std::vector<VisitArtifacts>* artifacts);

/// Reads a JSON file, mapping parse failures to ConfigError.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace slicegen
