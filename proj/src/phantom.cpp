#include "slicegen/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "slicegen/random.hpp"

namespace slicegen {

namespace {

constexpr std::uint64_t kProfileStream = 0x70726f66;  // "prof"
constexpr std::uint64_t kVisitStream = 0x76697369;    // "visi"
constexpr std::uint64_t kJitterStream = 0x6a697474;   // "jitt"

// Body outline semi-axes at habitus 1, in half-image units.
constexpr double kBodyHalfWidth = 0.80;
constexpr double kBodyHalfHeight = 0.64;
// Muscle wall thickness at level 0, as a fraction of the body radius.
constexpr double kMuscleThickness = 0.18;

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y, double size) const {
    if (size <= 0.0) return false;
    const double dx = (x - cx) / (rx * size), dy = (y - cy) / (ry * size);
    return dx * dx + dy * dy <= 1.0;
  }
};

// Organ layout in cavity coordinates (unit disc = smallest cavity over all levels).
constexpr Ellipse kLiver{-0.55, -0.20, 0.32, 0.42};
constexpr Ellipse kKidneyLeft{-0.45, 0.40, 0.24, 0.28};
constexpr Ellipse kKidneyRight{0.45, 0.40, 0.24, 0.28};
constexpr Ellipse kBowel{0.55, -0.30, 0.24, 0.24};
// Visceral fat blobs; radii are multiplied by the level-dependent blob scale.
constexpr Ellipse kFatCentral{0.0, 0.05, 1.0, 1.0};
constexpr Ellipse kFatAnterior{0.0, -0.62, 0.45, 0.45};

double ramp(double v, double from, double to) {
  return std::clamp((v - from) / (to - from), 0.0, 1.0);
}

// Size factor in [0, 1] for each organ at level v; 0 means absent.
struct OrganSizes {
  double liver, kidneys, bowel;
};

OrganSizes organ_sizes(double v, double phase) {
  const double s = 0.1 * (phase - 0.5);
  // A gentle early taper of the liver and late growth of the bowel give every level a cue;
  // the steep steps around the middle keep the target region distinct.
  constexpr double early = 0.3;
  return {1.0 - early * ramp(v, 0.0 + s, 0.30 + s) - (1.0 - early) * ramp(v, 0.30 + s, 0.45 + s),
          std::min(ramp(v, 0.25 + s, 0.35 + s), 1.0 - ramp(v, 0.65 + s, 0.75 + s)),
          (1.0 - early) * ramp(v, 0.55 + s, 0.70 + s) + early * ramp(v, 0.70 + s, 1.0 + s)};
}

std::uint64_t level_bits(double level) { return std::bit_cast<std::uint64_t>(level); }

}  // namespace

double hu_to_unit(double value) {
  if (!std::isfinite(value)) throw DomainError("hu_to_unit: non-finite input");
  const double clamped = std::clamp(value, hu::kWindowLow, hu::kWindowHigh);
  return (clamped - hu::kWindowLow) / (hu::kWindowHigh - hu::kWindowLow);
}

double muscle_area_schedule(double level) { return 1.0 - 0.25 * level; }
double visceral_area_schedule(double level) { return 1.0 + 0.5 * level; }

void validate(const SubjectProfile& p) {
  if (!(p.habitus_scale >= 0.8 && p.habitus_scale <= 1.2))
    throw DomainError("habitus_scale outside [0.8, 1.2]");
  if (!(p.fat_thickness >= 0.05 && p.fat_thickness <= 0.2))
    throw DomainError("fat_thickness outside [0.05, 0.2]");
  if (!(p.organ_phase >= 0.0 && p.organ_phase < 1.0))
    throw DomainError("organ_phase outside [0, 1)");
}

PhantomSlice render_slice(const SubjectProfile& profile, double level, const PhantomConfig& config) {
  validate(profile);
  if (!(level >= 0.0 && level <= 1.0))
    throw DomainError("render_slice: level " + std::to_string(level) + " outside [0, 1]");
  if (config.image_size < 8) throw ConfigError("phantom image_size must be at least 8");
  if (!(config.pixel_area > 0.0)) throw ConfigError("pixel_area must be positive");

  const std::size_t n = config.image_size;
  const double half = double(n) / 2.0;
  const double ax = kBodyHalfWidth * profile.habitus_scale;
  const double ay = kBodyHalfHeight * profile.habitus_scale;

  const double wall_outer = 1.0 - profile.fat_thickness;
  const double wall_inner0 = wall_outer - kMuscleThickness;
  const double wall_area0 = wall_outer * wall_outer - wall_inner0 * wall_inner0;
  const double wall_inner =
      std::sqrt(wall_outer * wall_outer - wall_area0 * muscle_area_schedule(level));
  // Areas scale with the square of the radius, so the blob radius takes the square root.
  const double blob_scale =
      (0.2 + 0.6 * profile.fat_thickness) * std::sqrt(visceral_area_schedule(level));
  const OrganSizes organs = organ_sizes(level, profile.organ_phase);

  PhantomSlice slice;
  slice.level = level;
  slice.pixel_area = config.pixel_area;
  slice.image = Image(n, n);
  slice.body = Mask(n, n);
  slice.inner_wall = Mask(n, n);
  slice.muscle = Mask(n, n);
  slice.adipose = Mask(n, n);

  Rng jitter(derive_seed(profile.intensity_jitter_seed, {kJitterStream, level_bits(level)}));
  std::uniform_real_distribution<double> noise(-hu::kJitter, hu::kJitter);

  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double x = (double(c) + 0.5 - half) / half;
      const double y = (double(r) + 0.5 - half) / half;
      const double rho = std::hypot(x / ax, y / ay);
      if (rho > 1.0) continue;  // air, exactly 0 after windowing

      double value = hu::kSoftTissue;
      slice.body.set(r, c, true);
      if (rho > wall_outer) {
        value = hu::kFat;
        slice.adipose.set(r, c, true);
      } else if (rho > wall_inner) {
        value = hu::kMuscle;
        slice.muscle.set(r, c, true);
      } else {
        slice.inner_wall.set(r, c, true);
        const double u = x / (ax * wall_inner0);
        const double w = y / (ay * wall_inner0);
        if (kLiver.contains(u, w, organs.liver)) value = hu::kLiver;
        if (kKidneyLeft.contains(u, w, organs.kidneys) || kKidneyRight.contains(u, w, organs.kidneys))
          value = hu::kKidney;
        if (kBowel.contains(u, w, organs.bowel)) value = hu::kBowel;
        if (kFatCentral.contains(u, w, blob_scale) || kFatAnterior.contains(u, w, blob_scale)) {
          value = hu::kFat;
          slice.adipose.set(r, c, true);
        }
      }
      slice.image.at(r, c) = static_cast<float>(hu_to_unit(value + noise(jitter)));
    }
  return slice;
}

SubjectProfile make_profile(int subject_id, std::uint64_t cohort_seed) {
  Rng rng(derive_seed(cohort_seed, {kProfileStream, std::uint64_t(subject_id)}));
  SubjectProfile p;
  p.subject_id = subject_id;
  p.habitus_scale = 0.8 + 0.4 * uniform01(rng);
  p.fat_thickness = 0.05 + 0.15 * uniform01(rng);
  p.organ_phase = uniform01(rng);
  p.intensity_jitter_seed = rng();
  return p;
}

Cohort make_cohort(int n_subjects, int visits_per_subject, double level_jitter,
                   std::uint64_t cohort_seed, double target_level) {
  if (n_subjects < 1) throw ConfigError("make_cohort: n_subjects must be >= 1");
  if (visits_per_subject < 1) throw ConfigError("make_cohort: visits_per_subject must be >= 1");
  if (!(level_jitter >= 0.0)) throw ConfigError("make_cohort: level_jitter must be >= 0");
  if (!(target_level >= 0.0 && target_level <= 1.0))
    throw ConfigError("make_cohort: target_level outside [0, 1]");

  Cohort cohort;
  cohort.cohort_seed = cohort_seed;
  cohort.target_level = target_level;
  for (int id = 0; id < n_subjects; ++id) {
    cohort.subjects.push_back(make_profile(id, cohort_seed));
    Rng rng(derive_seed(cohort_seed, {kVisitStream, std::uint64_t(id)}));
    std::vector<double> levels;
    for (int v = 0; v < visits_per_subject; ++v)
      levels.push_back(std::clamp(target_level + level_jitter * standard_normal(rng), 0.0, 1.0));
    cohort.visit_levels.push_back(std::move(levels));
  }
  return cohort;
}

std::vector<double> level_grid(int n_levels) {
  if (n_levels < 2) throw ConfigError("level_grid needs at least 2 levels");
  std::vector<double> out;
  for (int i = 0; i < n_levels; ++i) out.push_back(double(i) / double(n_levels - 1));
  return out;
}

}  // namespace slicegen
