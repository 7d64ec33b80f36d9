#include "slicegen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "slicegen/checkpoint.hpp"
#include "slicegen/parallel.hpp"
#include "slicegen/pgm.hpp"
#include "slicegen/random.hpp"

namespace slicegen {

namespace {

constexpr std::uint64_t kCohortStream = 0x636f686f;  // "coho"
constexpr std::uint64_t kEvalStream = 0x6576616c;    // "eval"

using nlohmann::json;

// Strict section reader: every key must be consumed by `apply`.
template <typename Fn>
void read_section(const json& j, const std::string& section, Fn&& apply) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  try {
    for (const auto& [key, value] : j.items())
      if (!apply(key, value)) throw ConfigError("unknown " + section + " key '" + key + "'");
  } catch (const json::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

template <typename T>
T non_negative(const json& v, const char* key) {
  if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(std::string(key) + " must be >= 0");
  return v.get<T>();
}

std::string slice_stem(int visit) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%02d", visit);
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---- config ------------------------------------------------------------------

void RunConfig::validate() const {
  train.validate();
  if (phantom.image_size != train.model.image_size)
    throw ConfigError("phantom.image_size must equal train.image_size");
  if (regressor.image_size != phantom.image_size)
    throw ConfigError("regressor image size must equal phantom.image_size");
  if (phantom.train_subjects < 1 || phantom.test_subjects < 1 || phantom.cohort_subjects < 1)
    throw ConfigError("subject counts must be >= 1");
  if (phantom.levels < 2) throw ConfigError("phantom.levels must be >= 2");
  if (phantom.visits < 1) throw ConfigError("phantom.visits must be >= 1");
  if (!(phantom.level_jitter >= 0.0)) throw ConfigError("phantom.level_jitter must be >= 0");
  if (!(phantom.target_level >= 0.0 && phantom.target_level <= 1.0))
    throw ConfigError("phantom.target_level must lie in [0, 1]");
  if (!(phantom.pixel_area > 0.0)) throw ConfigError("phantom.pixel_area must be positive");
  if (mi_bins < 2) throw ConfigError("metrics.mi_bins must be >= 2");
  if (ssim.window < 1 || std::size_t(ssim.window) > phantom.image_size)
    throw ConfigError("metrics.ssim_window must fit the image");
  if (select != "mi" && select != "bpr") throw ConfigError("select.method must be 'mi' or 'bpr'");
  fcm.validate();
  if (!(band.low < band.high)) throw ConfigError("muscle_band.low must be below muscle_band.high");
  if (workdir.empty()) throw ConfigError("workdir must not be empty");
}

json to_json(const RunConfig& c) {
  return {{"train", to_json(c.train)},
          {"phantom",
           {{"image_size", c.phantom.image_size},
            {"pixel_area", c.phantom.pixel_area},
            {"train_subjects", c.phantom.train_subjects},
            {"test_subjects", c.phantom.test_subjects},
            {"levels", c.phantom.levels},
            {"cohort_subjects", c.phantom.cohort_subjects},
            {"visits", c.phantom.visits},
            {"level_jitter", c.phantom.level_jitter},
            {"cohort_seed", c.phantom.cohort_seed},
            {"target_level", c.phantom.target_level}}},
          {"metrics",
           {{"ssim_window", c.ssim.window},
            {"ssim_sigma", c.ssim.sigma},
            {"ssim_k1", c.ssim.k1},
            {"ssim_k2", c.ssim.k2},
            {"mi_bins", c.mi_bins}}},
          {"select",
           {{"method", c.select},
            {"regressor_channels", c.regressor.channels},
            {"regressor_epochs", c.regressor.epochs},
            {"regressor_lr", c.regressor.lr},
            {"regressor_batch_size", c.regressor.batch_size},
            {"regressor_seed", c.regressor.seed}}},
          {"fcm", {{"c", c.fcm.c}, {"m", c.fcm.m}, {"tol", c.fcm.tol}, {"max_iter", c.fcm.max_iter}, {"seed", c.fcm.seed}}},
          {"muscle_band",
           {{"low", c.band.low},
            {"high", c.band.high},
            {"min_radius", c.band.min_radius},
            {"wall_quantile", c.band.wall_quantile}}},
          {"workdir", c.workdir}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  read_section(j, "config", [&](const std::string& key, const json& v) {
    if (key == "train") {
      c.train = train_config_from_json(v);
    } else if (key == "phantom") {
      read_section(v, "phantom", [&](const std::string& k, const json& x) {
        auto& p = c.phantom;
        if (k == "image_size") p.image_size = non_negative<std::size_t>(x, "image_size");
        else if (k == "pixel_area") p.pixel_area = x.get<double>();
        else if (k == "train_subjects") p.train_subjects = x.get<int>();
        else if (k == "test_subjects") p.test_subjects = x.get<int>();
        else if (k == "levels") p.levels = x.get<int>();
        else if (k == "cohort_subjects") p.cohort_subjects = x.get<int>();
        else if (k == "visits") p.visits = x.get<int>();
        else if (k == "level_jitter") p.level_jitter = x.get<double>();
        else if (k == "cohort_seed") p.cohort_seed = non_negative<std::uint64_t>(x, "cohort_seed");
        else if (k == "target_level") p.target_level = x.get<double>();
        else return false;
        return true;
      });
    } else if (key == "metrics") {
      read_section(v, "metrics", [&](const std::string& k, const json& x) {
        if (k == "ssim_window") c.ssim.window = x.get<int>();
        else if (k == "ssim_sigma") c.ssim.sigma = x.get<double>();
        else if (k == "ssim_k1") c.ssim.k1 = x.get<double>();
        else if (k == "ssim_k2") c.ssim.k2 = x.get<double>();
        else if (k == "mi_bins") c.mi_bins = non_negative<std::size_t>(x, "mi_bins");
        else return false;
        return true;
      });
    } else if (key == "select") {
      read_section(v, "select", [&](const std::string& k, const json& x) {
        if (k == "method") c.select = x.get<std::string>();
        else if (k == "regressor_channels") c.regressor.channels = non_negative<std::size_t>(x, k.c_str());
        else if (k == "regressor_epochs") c.regressor.epochs = x.get<int>();
        else if (k == "regressor_lr") c.regressor.lr = x.get<double>();
        else if (k == "regressor_batch_size") c.regressor.batch_size = non_negative<std::size_t>(x, k.c_str());
        else if (k == "regressor_seed") c.regressor.seed = non_negative<std::uint64_t>(x, k.c_str());
        else return false;
        return true;
      });
    } else if (key == "fcm") {
      read_section(v, "fcm", [&](const std::string& k, const json& x) {
        if (k == "c") c.fcm.c = non_negative<std::size_t>(x, "c");
        else if (k == "m") c.fcm.m = x.get<double>();
        else if (k == "tol") c.fcm.tol = x.get<double>();
        else if (k == "max_iter") c.fcm.max_iter = x.get<int>();
        else if (k == "seed") c.fcm.seed = non_negative<std::uint64_t>(x, "seed");
        else return false;
        return true;
      });
    } else if (key == "muscle_band") {
      read_section(v, "muscle_band", [&](const std::string& k, const json& x) {
        if (k == "low") c.band.low = x.get<double>();
        else if (k == "high") c.band.high = x.get<double>();
        else if (k == "min_radius") c.band.min_radius = x.get<double>();
        else if (k == "wall_quantile") c.band.wall_quantile = x.get<double>();
        else return false;
        return true;
      });
    } else if (key == "workdir") {
      c.workdir = v.get<std::string>();
    } else {
      return false;
    }
    return true;
  });
  // The phantom size follows the model unless given explicitly.
  if (!j.contains("phantom") || !j["phantom"].contains("image_size")) c.phantom.image_size = c.train.model.image_size;
  c.regressor.image_size = c.phantom.image_size;
  c.validate();
  return c;
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json(path)); }

// ---- data ----------------------------------------------------------------------

std::vector<SubjectProfile> train_profiles(const PhantomSettings& p) {
  std::vector<SubjectProfile> out;
  for (int i = 0; i < p.train_subjects; ++i) out.push_back(make_profile(i, p.cohort_seed));
  return out;
}

std::vector<SubjectProfile> test_profiles(const PhantomSettings& p) {
  std::vector<SubjectProfile> out;
  for (int i = 0; i < p.test_subjects; ++i) out.push_back(make_profile(kTestSubjectBase + i, p.cohort_seed));
  return out;
}

Cohort harmonization_cohort(const PhantomSettings& p) {
  return make_cohort(p.cohort_subjects, p.visits, p.level_jitter, derive_seed(p.cohort_seed, {kCohortStream}),
                     p.target_level);
}

SubjectProfile reference_profile() {
  SubjectProfile p;
  p.subject_id = -1;
  p.habitus_scale = 1.0;
  p.fat_thickness = 0.125;
  p.organ_phase = 0.5;
  p.intensity_jitter_seed = 0;
  return p;
}

std::vector<const IndexedSubject*> DataIndex::split(const std::string& name) const {
  std::vector<const IndexedSubject*> out;
  for (const auto& s : subjects)
    if (s.split == name) out.push_back(&s);
  return out;
}

namespace {

IndexedSlice write_slice(const std::filesystem::path& root, const std::string& dir, int visit,
                         const PhantomSlice& s) {
  IndexedSlice e;
  e.visit = visit;
  e.level = s.level;
  const std::string stem = dir + "/" + slice_stem(visit);
  e.image = stem + ".pgm";
  e.body = stem + "_body.pgm";
  e.inner_wall = stem + "_inner_wall.pgm";
  e.muscle = stem + "_muscle.pgm";
  e.adipose = stem + "_adipose.pgm";
  write_pgm(root / e.image, s.image);
  write_pgm(root / e.body, s.body);
  write_pgm(root / e.inner_wall, s.inner_wall);
  write_pgm(root / e.muscle, s.muscle);
  write_pgm(root / e.adipose, s.adipose);
  return e;
}

json to_json(const IndexedSlice& s) {
  return {{"visit", s.visit},
          {"level", s.level},
          {"image", s.image},
          {"masks", {{"body", s.body}, {"inner_wall", s.inner_wall}, {"muscle", s.muscle}, {"adipose", s.adipose}}}};
}

}  // namespace

DataIndex generate_dataset(const RunConfig& config, const std::filesystem::path& data_dir) {
  config.validate();
  const PhantomSettings& p = config.phantom;
  const PhantomConfig render{p.image_size, p.pixel_area};
  DataIndex index;
  index.root = data_dir;
  index.image_size = p.image_size;
  index.pixel_area = p.pixel_area;
  index.target_level = p.target_level;
  index.reference = "reference.pgm";
  std::filesystem::create_directories(data_dir);
  write_pgm(data_dir / index.reference, render_slice(reference_profile(), p.target_level, render).image);

  const std::vector<double> grid = level_grid(p.levels);
  auto sweep = [&](const std::vector<SubjectProfile>& profiles, const std::string& split) {
    for (const SubjectProfile& prof : profiles) {
      IndexedSubject subj{prof.subject_id, split, {}};
      const std::string dir = split + "/s" + std::to_string(prof.subject_id);
      for (std::size_t k = 0; k < grid.size(); ++k)
        subj.slices.push_back(write_slice(data_dir, dir, int(k), render_slice(prof, grid[k], render)));
      index.subjects.push_back(std::move(subj));
    }
  };
  sweep(train_profiles(p), "train");
  sweep(test_profiles(p), "test");

  const Cohort cohort = harmonization_cohort(p);
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
    const SubjectProfile& prof = cohort.subjects[i];
    IndexedSubject subj{prof.subject_id, "cohort", {}};
    const std::string dir = "cohort/s" + std::to_string(prof.subject_id);
    for (std::size_t v = 0; v < cohort.visit_levels[i].size(); ++v)
      subj.slices.push_back(write_slice(data_dir, dir, int(v), render_slice(prof, cohort.visit_levels[i][v], render)));
    index.subjects.push_back(std::move(subj));
  }

  json subjects = json::array();
  for (const auto& s : index.subjects) {
    json slices = json::array();
    for (const auto& e : s.slices) slices.push_back(to_json(e));
    subjects.push_back({{"subject_id", s.subject_id}, {"split", s.split}, {"slices", slices}});
  }
  write_json(data_dir / "index.json", {{"format", "slicegen-data"},
                                       {"version", 1},
                                       {"image_size", index.image_size},
                                       {"pixel_area", index.pixel_area},
                                       {"target_level", index.target_level},
                                       {"reference", index.reference},
                                       {"subjects", subjects}});
  return index;
}

DataIndex load_index(const std::filesystem::path& data_dir) {
  const json j = read_json(data_dir / "index.json");
  DataIndex index;
  index.root = data_dir;
  try {
    if (j.at("format") != "slicegen-data" || j.at("version") != 1) throw LoadError("unsupported data index format");
    index.image_size = j.at("image_size").get<std::size_t>();
    index.pixel_area = j.at("pixel_area").get<double>();
    index.target_level = j.at("target_level").get<double>();
    index.reference = j.at("reference").get<std::string>();
    for (const auto& s : j.at("subjects")) {
      IndexedSubject subj;
      subj.subject_id = s.at("subject_id").get<int>();
      subj.split = s.at("split").get<std::string>();
      for (const auto& e : s.at("slices")) {
        IndexedSlice slice;
        slice.visit = e.at("visit").get<int>();
        slice.level = e.at("level").get<double>();
        slice.image = e.at("image").get<std::string>();
        const auto& m = e.at("masks");
        slice.body = m.at("body").get<std::string>();
        slice.inner_wall = m.at("inner_wall").get<std::string>();
        slice.muscle = m.at("muscle").get<std::string>();
        slice.adipose = m.at("adipose").get<std::string>();
        subj.slices.push_back(std::move(slice));
      }
      if (subj.slices.empty()) throw LoadError("subject " + std::to_string(subj.subject_id) + " has no slices");
      index.subjects.push_back(std::move(subj));
    }
  } catch (const json::exception& e) {
    throw LoadError((data_dir / "index.json").string() + ": " + e.what());
  }
  return index;
}

std::size_t nearest_level(const IndexedSubject& subject, double level) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < subject.slices.size(); ++k)
    if (std::fabs(subject.slices[k].level - level) < std::fabs(subject.slices[best].level - level)) best = k;
  return best;
}

// ---- target selection ------------------------------------------------------------

json to_json(const Selection& s) {
  json entries = json::array();
  for (const auto& e : s.entries)
    entries.push_back(
        {{"subject_id", e.subject_id}, {"slice", e.slice}, {"level", e.level}, {"image", e.image}, {"score", e.score}});
  return {{"method", s.method}, {"target_level", s.target_level}, {"subjects", entries}};
}

Selection selection_from_json(const json& j) {
  Selection s;
  try {
    s.method = j.at("method").get<std::string>();
    s.target_level = j.at("target_level").get<double>();
    for (const auto& e : j.at("subjects"))
      s.entries.push_back({e.at("subject_id").get<int>(), e.at("slice").get<std::size_t>(),
                           e.at("level").get<double>(), e.at("image").get<std::string>(), e.at("score").get<double>()});
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed selection file: ") + e.what());
  }
  return s;
}

Selection select_targets(const RunConfig& config, const DataIndex& index) {
  const auto subjects = index.split("train");
  if (subjects.empty()) throw DegenerateInputError("data index has no train subjects");
  Selection out;
  out.method = config.select;
  out.target_level = config.phantom.target_level;

  std::vector<std::vector<Image>> sweeps;
  for (const IndexedSubject* s : subjects) {
    std::vector<Image> images;
    for (const auto& e : s->slices) images.push_back(read_pgm(index.root / e.image));
    sweeps.push_back(std::move(images));
  }

  if (config.select == "mi") {
    const Image reference = read_pgm(index.root / index.reference);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const std::size_t k = select_target_mi(sweeps[i], reference, config.mi_bins);
      out.entries.push_back({subjects[i]->subject_id, k, subjects[i]->slices[k].level, subjects[i]->slices[k].image,
                             registered_mutual_information(sweeps[i][k], reference, config.mi_bins)});
    }
  } else {
    std::vector<Image> images;
    std::vector<double> levels;
    for (std::size_t i = 0; i < subjects.size(); ++i)
      for (std::size_t k = 0; k < sweeps[i].size(); ++k) {
        images.push_back(sweeps[i][k]);
        levels.push_back(subjects[i]->slices[k].level);
      }
    const LevelRegressor reg = train_level_regressor(images, levels, config.regressor);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const std::size_t k = select_target_bpr(sweeps[i], reg, config.phantom.target_level);
      out.entries.push_back({subjects[i]->subject_id, k, subjects[i]->slices[k].level, subjects[i]->slices[k].image,
                             reg.predict(sweeps[i][k])});
    }
  }
  return out;
}

// ---- training ----------------------------------------------------------------------

PairedSet load_training_pairs(const DataIndex& index, double target_level, const Selection* selection) {
  std::map<int, std::size_t> chosen;
  if (selection)
    for (const auto& e : selection->entries) chosen[e.subject_id] = e.slice;
  PairedSet set;
  for (const IndexedSubject* s : index.split("train")) {
    std::size_t t = nearest_level(*s, target_level);
    if (selection) {
      const auto it = chosen.find(s->subject_id);
      if (it == chosen.end())
        throw LoadError("selection has no entry for train subject " + std::to_string(s->subject_id));
      if (it->second >= s->slices.size()) throw LoadError("selection index out of range");
      t = it->second;
    }
    const Image target = read_pgm(index.root / s->slices[t].image);
    for (const auto& e : s->slices) {
      set.conditionals.push_back(read_pgm(index.root / e.image));
      set.targets.push_back(target);
      set.subject_ids.push_back(s->subject_id);
      set.levels.push_back(e.level);
    }
  }
  if (set.size() == 0) throw DegenerateInputError("no training pairs");
  set.validate();
  return set;
}

std::string loss_trace_header() { return "epoch,step,recon,gen,kl,critic,adversarial,total\n"; }

std::string loss_trace_row(const LossReport& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt(r.recon) + "," + fmt(r.gen) + "," +
         fmt(r.kl) + "," + fmt(r.critic) + "," + fmt(r.adversarial) + "," + fmt(r.total) + "\n";
}

TrainingRun run_training(const RunConfig& config, const PairedSet& data, const std::filesystem::path& run_dir,
                         bool resume, const std::function<void(int, const LossReport&)>& on_epoch) {
  config.validate();
  const std::filesystem::path latest = run_dir / "latest.csg", trace_path = run_dir / "loss_trace.csv";
  std::optional<Trainer> trainer;
  TrainingRun run;
  std::string trace = loss_trace_header();

  if (resume && std::filesystem::exists(latest)) {
    const Checkpoint ck = load_checkpoint(latest);
    // Only the epoch count may change between the original run and its resumption.
    TrainConfig stored = train_config_from_json(ck.train_config);
    stored.epochs = config.train.epochs;
    if (stored != config.train)
      throw ConfigError("cannot resume: run/latest.csg was trained with a different train config");
    trainer.emplace(restore_trainer(ck, config.train));
    run.first_epoch = ck.epoch + 1;
    // Keep the rows of completed epochs only.
    const std::size_t keep = std::size_t(run.first_epoch) * trainer->steps_per_epoch(data.size());
    std::istringstream in(read_file(trace_path));
    std::string line;
    std::getline(in, line);
    for (std::size_t i = 0; i < keep; ++i) {
      if (!std::getline(in, line)) throw LoadError("loss trace is shorter than the checkpointed epoch");
      trace += line + "\n";
    }
  } else {
    trainer.emplace(config.train);
  }

  write_json(run_dir / "config.json", to_json(config));
  for (int epoch = run.first_epoch; epoch < config.train.epochs; ++epoch) {
    const std::vector<LossReport> reports = trainer->train_epoch(data, epoch);
    LossReport mean;
    mean.epoch = epoch;
    for (const auto& r : reports) {
      trace += loss_trace_row(r);
      mean.recon += r.recon / double(reports.size());
      mean.gen += r.gen / double(reports.size());
      mean.kl += r.kl / double(reports.size());
      mean.critic += r.critic / double(reports.size());
      mean.adversarial += r.adversarial / double(reports.size());
      mean.total += r.total / double(reports.size());
    }
    const std::string bytes = encode_checkpoint(make_checkpoint(*trainer, epoch));
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.csg", epoch);
    write_file_atomic(run_dir / "checkpoints" / name, bytes);
    write_file_atomic(trace_path, trace);
    write_file_atomic(latest, bytes);  // last, so latest never points past the trace
    ++run.epochs_done;
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (run.epochs_done == 0 && !std::filesystem::exists(trace_path)) write_file_atomic(trace_path, trace);
  run.latest = latest;
  return run;
}

// ---- evaluation ---------------------------------------------------------------------

EvalRow evaluate_subject(const CSliceGen<float>& model, int subject_id, std::span<const Image> conditionals,
                         const Image& target, std::uint64_t seed, const SsimConfig& ssim_config) {
  if (conditionals.empty()) throw DegenerateInputError("evaluate_subject: no conditionals");
  Rng rng(derive_seed(seed, {kEvalStream, std::uint64_t(std::int64_t(subject_id))}));
  const std::vector<Image> generated = generate(model, conditionals, rng);
  EvalRow row;
  row.subject_id = subject_id;
  const double n = double(conditionals.size());
  for (std::size_t i = 0; i < conditionals.size(); ++i) {
    row.ssim_generated += ssim(generated[i], target, ssim_config) / n;
    row.psnr_generated += psnr(generated[i], target) / n;
    row.ssim_copy += ssim(conditionals[i], target, ssim_config) / n;
    row.psnr_copy += psnr(conditionals[i], target) / n;
    row.l1_generated += mean_absolute_error(generated[i], target) / n;
    row.l1_copy += mean_absolute_error(conditionals[i], target) / n;
  }
  return row;
}

EvalSummary summarize(std::span<const EvalRow> rows) {
  EvalSummary s;
  s.subjects = rows.size();
  std::vector<double> sg, sc, pg, pc, gain;
  for (const auto& r : rows) {
    sg.push_back(r.ssim_generated);
    sc.push_back(r.ssim_copy);
    pg.push_back(r.psnr_generated);
    pc.push_back(r.psnr_copy);
    gain.push_back(r.ssim_generated - r.ssim_copy);
  }
  s.median_ssim_generated = median(sg);
  s.median_ssim_copy = median(sc);
  s.median_psnr_generated = median(pg);
  s.median_psnr_copy = median(pc);
  s.median_ssim_gain = median(gain);
  return s;
}

std::vector<EvalRow> evaluate_index(const CSliceGen<float>& model, const DataIndex& index, double target_level,
                                    std::uint64_t seed, const SsimConfig& ssim_config) {
  const auto subjects = index.split("test");
  if (subjects.empty()) throw DegenerateInputError("data index has no test subjects");
  std::vector<EvalRow> rows;
  for (const IndexedSubject* s : subjects) {
    const std::size_t t = nearest_level(*s, target_level);
    const Image target = read_pgm(index.root / s->slices[t].image);
    std::vector<Image> conditionals;
    for (std::size_t k = 0; k < s->slices.size(); ++k)
      if (k != t) conditionals.push_back(read_pgm(index.root / s->slices[k].image));
    if (conditionals.empty()) throw DegenerateInputError("test subject has a single slice");
    rows.push_back(evaluate_subject(model, s->subject_id, conditionals, target, seed, ssim_config));
  }
  return rows;
}

void write_eval(const std::filesystem::path& dir, std::span<const EvalRow> rows) {
  std::string csv = "subject_id,ssim_generated,psnr_generated,ssim_copy_baseline,psnr_copy_baseline\n";
  for (const auto& r : rows)
    csv += std::to_string(r.subject_id) + "," + fmt(r.ssim_generated) + "," + fmt(r.psnr_generated) + "," +
           fmt(r.ssim_copy) + "," + fmt(r.psnr_copy) + "\n";
  write_file_atomic(dir / "metrics.csv", csv);
  const EvalSummary s = summarize(rows);
  write_json(dir / "summary.json", {{"subjects", s.subjects},
                                    {"median_ssim_generated", s.median_ssim_generated},
                                    {"median_ssim_copy_baseline", s.median_ssim_copy},
                                    {"median_psnr_generated", s.median_psnr_generated},
                                    {"median_psnr_copy_baseline", s.median_psnr_copy},
                                    {"median_ssim_gain", s.median_ssim_gain}});
}

// ---- harmonization ---------------------------------------------------------------------

void write_harmonization(const std::filesystem::path& dir, const HarmonizationReport& report,
                         const std::vector<VisitArtifacts>* artifacts) {
  std::string csv = "subject_id,visit,level,source,muscle_area_mm2,visceral_fat_area_mm2,empty_inner_wall\n";
  for (const auto& r : report.rows)
    csv += std::to_string(r.subject_id) + "," + std::to_string(r.visit) + "," + fmt(r.level) + "," +
           to_string(r.source) + "," + fmt(r.muscle_area) + "," + fmt(r.visceral_fat_area) + "," +
           (r.empty_inner_wall ? "1" : "0") + "\n";
  write_file_atomic(dir / "report.csv", csv);

  json subjects = json::array();
  for (const auto& s : report.subjects)
    subjects.push_back({{"subject_id", s.subject_id},
                        {"muscle_std_original", s.muscle_std_original},
                        {"muscle_std_generated", s.muscle_std_generated},
                        {"visceral_fat_std_original", s.visceral_std_original},
                        {"visceral_fat_std_generated", s.visceral_std_generated}});
  auto ratio = [](const std::optional<double>& r) { return r ? json(*r) : json(nullptr); };
  write_json(dir / "summary.json", {{"muscle_reduction_ratio", ratio(report.muscle_ratio)},
                                    {"visceral_fat_reduction_ratio", ratio(report.visceral_ratio)},
                                    {"subjects", subjects}});

  if (artifacts)
    for (const auto& a : *artifacts) {
      const std::string stem = "s" + std::to_string(a.subject_id) + "_" + slice_stem(a.visit);
      write_pgm(dir / "masks" / (stem + "_original.pgm"), a.original);
      write_pgm(dir / "masks" / (stem + "_generated.pgm"), a.generated);
      write_pgm(dir / "masks" / (stem + "_muscle.pgm"), a.generated_muscle);
      write_pgm(dir / "masks" / (stem + "_visceral_fat.pgm"), a.generated_visceral_fat);
    }
}

}  // namespace slicegen
