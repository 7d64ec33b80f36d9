#include "slicegen/body_composition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slicegen/parallel.hpp"

namespace slicegen {

void FcmConfig::validate() const {
  if (c < 1) throw ConfigError("fcm: c must be >= 1");
  if (!(m > 1.0)) throw ConfigError("fcm: fuzzifier m must be > 1");
  if (!(tol > 0.0)) throw ConfigError("fcm: tol must be > 0");
  if (max_iter < 1) throw ConfigError("fcm: max_iter must be >= 1");
}

std::size_t Membership::hard_label(std::size_t i) const {
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (at(i, j) > at(i, best)) best = j;
  return best;
}

namespace {

std::vector<double> quantiles(const std::vector<double>& sorted, std::size_t c) {
  std::vector<double> q;
  for (std::size_t j = 0; j < c; ++j) {
    const double pos = (double(j) + 0.5) / double(c) * double(sorted.size()) - 0.5;
    const std::size_t lo = static_cast<std::size_t>(std::max(0.0, std::floor(pos)));
    const std::size_t hi = std::min(sorted.size() - 1, lo + 1);
    const double w = std::clamp(pos - double(lo), 0.0, 1.0);
    q.push_back(sorted[lo] + w * (sorted[hi] - sorted[lo]));
  }
  return q;
}

bool has_duplicates(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] == v[i - 1]) return true;
  return false;
}

void update_memberships(std::span<const double> x, Membership& mem, double m) {
  const double p = 2.0 / (m - 1.0);
  const std::size_t c = mem.c;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double* row = mem.u.data() + i * c;
    std::size_t hit = c;
    for (std::size_t j = 0; j < c && hit == c; ++j)
      if (x[i] == mem.centroids[j]) hit = j;
    if (hit < c) {
      std::fill(row, row + c, 0.0);
      row[hit] = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double dj = std::fabs(x[i] - mem.centroids[j]);
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += std::pow(dj / std::fabs(x[i] - mem.centroids[k]), p);
      row[j] = 1.0 / s;
    }
  }
}

}  // namespace

double fcm_objective(std::span<const double> x, const Membership& mem, double m) {
  double j_total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < mem.c; ++j) {
      const double d = x[i] - mem.centroids[j];
      j_total += std::pow(mem.at(i, j), m) * d * d;
    }
  return j_total;
}

Membership fcm_cluster(std::span<const double> pixels, const FcmConfig& cfg) {
  cfg.validate();
  if (pixels.empty()) throw DegenerateInputError("fcm: no pixels");
  for (double v : pixels)
    if (!std::isfinite(v)) throw DomainError("fcm: non-finite intensity");

  std::vector<double> sorted(pixels.begin(), pixels.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (cfg.c > distinct.size())
    throw DegenerateInputError("fcm: " + std::to_string(cfg.c) + " clusters requested but only " +
                               std::to_string(distinct.size()) + " distinct values");

  Membership mem;
  mem.n = pixels.size();
  mem.c = cfg.c;
  mem.u.assign(mem.n * mem.c, 0.0);
  mem.centroids = quantiles(sorted, cfg.c);
  if (has_duplicates(mem.centroids)) mem.centroids = quantiles(distinct, cfg.c);

  for (int it = 0; it < cfg.max_iter; ++it) {
    update_memberships(pixels, mem, cfg.m);
    double shift = 0.0;
    for (std::size_t j = 0; j < mem.c; ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < mem.n; ++i) {
        const double w = std::pow(mem.at(i, j), cfg.m);
        num += w * pixels[i];
        den += w;
      }
      const double next = den > 0.0 ? num / den : mem.centroids[j];
      shift = std::max(shift, std::fabs(next - mem.centroids[j]));
      mem.centroids[j] = next;
    }
    mem.objective.push_back(fcm_objective(pixels, mem, cfg.m));
    mem.iterations = it + 1;
    if (shift < cfg.tol) {
      mem.converged = true;
      break;
    }
  }
  update_memberships(pixels, mem, cfg.m);

  // Relabel so centroids ascend.
  std::vector<std::size_t> order(mem.c);
  for (std::size_t j = 0; j < mem.c; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mem.centroids[a] < mem.centroids[b]; });
  Membership sorted_mem = mem;
  for (std::size_t j = 0; j < mem.c; ++j) {
    sorted_mem.centroids[j] = mem.centroids[order[j]];
    for (std::size_t i = 0; i < mem.n; ++i) sorted_mem.u[i * mem.c + j] = mem.at(i, order[j]);
  }
  return sorted_mem;
}

AdiposeSegmentation segment_adipose_detailed(const Image& image, const Mask& inner_wall, const FcmConfig& cfg) {
  require_same_size(image, inner_wall, "segment_adipose");
  cfg.validate();
  AdiposeSegmentation out;
  out.visceral_fat = Mask(image.rows(), image.cols());
  if (!inner_wall.any()) {
    out.empty_inner_wall = true;
    return out;
  }
  // Air sits at the bottom of the window and would swallow the fat cluster,
  // so only body pixels are clustered.
  std::vector<double> px;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (image.pixels()[i] > kBackgroundLevel) {
      px.push_back(image.pixels()[i]);
      where.push_back(i);
    }
  if (px.empty()) return out;
  std::vector<double> distinct = px;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  FcmConfig local = cfg;
  local.c = std::min(cfg.c, distinct.size());
  const Membership mem = fcm_cluster(px, local);

  // Centroids are sorted, so the darkest body cluster is the adipose candidate.
  if (mem.centroids[0] > kAdiposeCentroidMax) return out;
  out.adipose_centroid = mem.centroids[0];
  for (std::size_t k = 0; k < px.size(); ++k)
    if (inner_wall[where[k]] && mem.hard_label(k) == 0) out.visceral_fat.set(where[k], true);
  return out;
}

Mask segment_adipose(const Image& image, const Mask& inner_wall, const FcmConfig& cfg) {
  return segment_adipose_detailed(image, inner_wall, cfg).visceral_fat;
}

Mask body_mask(const Image& image) {
  Mask m(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) m.set(i, image.pixels()[i] > kBackgroundLevel);
  return m;
}

std::vector<double> body_radius(const Image& image) {
  const Mask body = body_mask(image);
  std::vector<double> rho(image.size(), std::numeric_limits<double>::infinity());
  std::size_t r0 = image.rows(), r1 = 0, c0 = image.cols(), c1 = 0;
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c)
      if (body.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r0 > r1) return rho;
  const double cy = (double(r0) + double(r1) + 1.0) / 2.0, cx = (double(c0) + double(c1) + 1.0) / 2.0;
  const double ay = (double(r1) - double(r0) + 1.0) / 2.0, ax = (double(c1) - double(c0) + 1.0) / 2.0;
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c)
      rho[r * image.cols() + c] = std::hypot((double(c) + 0.5 - cx) / ax, (double(r) + 0.5 - cy) / ay);
  return rho;
}

Mask muscle_band_mask(const Image& image, const MuscleBand& band) {
  const std::vector<double> rho = body_radius(image);
  Mask m(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image.pixels()[i];
    m.set(i, v > kBackgroundLevel && v >= band.low && v <= band.high && rho[i] >= band.min_radius);
  }
  return m;
}

Mask estimate_inner_wall(const Image& image, const Mask& muscle, const MuscleBand& band) {
  require_same_size(image, muscle, "estimate_inner_wall");
  Mask wall(image.rows(), image.cols());
  const std::vector<double> rho = body_radius(image);
  std::vector<double> radii;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (muscle[i]) radii.push_back(rho[i]);
  if (radii.empty()) return wall;
  std::sort(radii.begin(), radii.end());
  const double edge = radii[static_cast<std::size_t>(band.wall_quantile * double(radii.size() - 1))];
  for (std::size_t i = 0; i < image.size(); ++i)
    wall.set(i, image.pixels()[i] > kBackgroundLevel && rho[i] < edge && !muscle[i]);
  return wall;
}

double mask_area(const Mask& mask, double pixel_area) {
  if (!(pixel_area >= 0.0) || !std::isfinite(pixel_area)) throw DomainError("pixel_area must be >= 0");
  return double(mask.count()) * pixel_area;
}

Areas measure_areas(const Mask& muscle, const Mask& visceral_fat, double pixel_area) {
  return {mask_area(muscle, pixel_area), mask_area(visceral_fat, pixel_area)};
}

std::string to_string(AreaSource s) { return s == AreaSource::original ? "original" : "generated"; }

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / double(v.size()));
}

std::optional<double> median_reduction_ratio(std::span<const double> original, std::span<const double> generated) {
  if (original.size() != generated.size()) throw DimensionError("reduction ratio: column lengths differ");
  std::vector<double> ratios;
  for (std::size_t i = 0; i < original.size(); ++i)
    if (original[i] > 1e-12) ratios.push_back(generated[i] / original[i]);
  if (ratios.empty()) return std::nullopt;
  std::sort(ratios.begin(), ratios.end());
  const std::size_t mid = ratios.size() / 2;
  return ratios.size() % 2 ? ratios[mid] : 0.5 * (ratios[mid - 1] + ratios[mid]);
}

namespace {
constexpr std::uint64_t kHarmonizeStream = 0x6861726d;  // "harm"
}

HarmonizationReport harmonize_cohort(const Cohort& cohort, const CSliceGen<float>& model,
                                     const HarmonizeConfig& cfg) {
  return harmonize_cohort(cohort, model, cfg, nullptr);
}

HarmonizationReport harmonize_cohort(const Cohort& cohort, const CSliceGen<float>& model,
                                     const HarmonizeConfig& cfg, std::vector<VisitArtifacts>* artifacts) {
  if (cohort.subjects.size() != cohort.visit_levels.size())
    throw DimensionError("cohort subjects and visit lists differ in length");
  if (cfg.phantom.image_size != model.config().image_size)
    throw CheckpointError("checkpoint image size " + std::to_string(model.config().image_size) +
                    " does not match phantom image size " + std::to_string(cfg.phantom.image_size));

  struct Job {
    std::size_t subject, visit;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < cohort.subjects.size(); ++s)
    for (std::size_t v = 0; v < cohort.visit_levels[s].size(); ++v) jobs.push_back({s, v});

  std::vector<HarmonizationRow> original(jobs.size()), generated(jobs.size());
  std::vector<VisitArtifacts> arts(artifacts ? jobs.size() : 0);
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t k) {
    const auto [s, v] = jobs[k];
    const SubjectProfile& profile = cohort.subjects[s];
    const double level = cohort.visit_levels[s][v];
    const PhantomSlice slice = render_slice(profile, level, cfg.phantom);

    const AdiposeSegmentation orig_fat = segment_adipose_detailed(slice.image, slice.inner_wall, cfg.fcm);
    original[k] = {profile.subject_id, int(v), level, AreaSource::original,
                   mask_area(slice.muscle, slice.pixel_area), mask_area(orig_fat.visceral_fat, slice.pixel_area),
                   orig_fat.empty_inner_wall};

    Rng rng(derive_seed(cfg.seed, {kHarmonizeStream, std::uint64_t(profile.subject_id), std::uint64_t(v)}));
    const Image gen = generate(model, std::span<const Image>(&slice.image, 1), rng)[0];
    const Mask muscle = muscle_band_mask(gen, cfg.band);
    const AdiposeSegmentation gen_fat =
        segment_adipose_detailed(gen, estimate_inner_wall(gen, muscle, cfg.band), cfg.fcm);
    generated[k] = {profile.subject_id, int(v), level, AreaSource::generated,
                    mask_area(muscle, slice.pixel_area), mask_area(gen_fat.visceral_fat, slice.pixel_area),
                    gen_fat.empty_inner_wall};
    if (artifacts) arts[k] = {profile.subject_id, int(v), slice.image, gen, muscle, gen_fat.visceral_fat};
  });

  HarmonizationReport report;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    report.rows.push_back(original[k]);
    report.rows.push_back(generated[k]);
  }
  std::vector<double> mo, mg, vo, vg;
  for (std::size_t s = 0, k = 0; s < cohort.subjects.size(); ++s) {
    std::vector<double> a[4];
    for (std::size_t v = 0; v < cohort.visit_levels[s].size(); ++v, ++k) {
      a[0].push_back(original[k].muscle_area);
      a[1].push_back(generated[k].muscle_area);
      a[2].push_back(original[k].visceral_fat_area);
      a[3].push_back(generated[k].visceral_fat_area);
    }
    SubjectSpread sp{cohort.subjects[s].subject_id, population_std(a[0]), population_std(a[1]),
                     population_std(a[2]), population_std(a[3])};
    mo.push_back(sp.muscle_std_original);
    mg.push_back(sp.muscle_std_generated);
    vo.push_back(sp.visceral_std_original);
    vg.push_back(sp.visceral_std_generated);
    report.subjects.push_back(sp);
  }
  report.muscle_ratio = median_reduction_ratio(mo, mg);
  report.visceral_ratio = median_reduction_ratio(vo, vg);
  if (artifacts) *artifacts = std::move(arts);
  return report;
}

}  // namespace slicegen
