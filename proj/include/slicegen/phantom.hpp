#pragma once

// Procedural abdominal phantom slices.
//
// A slice is a stack of concentric regions painted in nominal Hounsfield units
// and windowed to [0, 1]: subcutaneous fat ring, muscle wall, and an inner
// cavity holding organs and visceral fat. The level coordinate v in [0, 1]
// runs from the superior (0) to the inferior (1) end of the field of view.
// Along v the muscle wall loses 25% of its area, visceral fat gains 50%, and
// organs enter or leave at thresholds offset per subject.

#include <cstdint>
#include <vector>

#include "slicegen/image.hpp"

namespace slicegen {

namespace hu {
inline constexpr double kWindowLow = -125.0;
inline constexpr double kWindowHigh = 275.0;
inline constexpr double kAir = -1000.0;
inline constexpr double kSoftTissue = 20.0;
inline constexpr double kFat = -90.0;
inline constexpr double kMuscle = 55.0;
inline constexpr double kLiver = 110.0;
inline constexpr double kKidney = 120.0;
inline constexpr double kBowel = 90.0;
inline constexpr double kJitter = 10.0;
}  // namespace hu

/// Soft-tissue window: clamp to [-125, 275] HU and map affinely onto [0, 1].
double hu_to_unit(double hu);

struct SubjectProfile {
  int subject_id = 0;
  double habitus_scale = 1.0;   // [0.8, 1.2]
  double fat_thickness = 0.1;   // [0.05, 0.2], fraction of body radius
  double organ_phase = 0.5;     // [0, 1)
  std::uint64_t intensity_jitter_seed = 0;

  friend bool operator==(const SubjectProfile&, const SubjectProfile&) = default;
};

void validate(const SubjectProfile& profile);

struct PhantomConfig {
  std::size_t image_size = 32;
  double pixel_area = 4.0;  // mm^2 per pixel
};

struct PhantomSlice {
  Image image;
  double level = 0.0;
  Mask body;
  Mask inner_wall;
  Mask muscle;
  Mask adipose;
  double pixel_area = 4.0;

  /// Adipose tissue inside the inner abdominal wall.
  Mask visceral_fat() const { return mask_and(adipose, inner_wall); }
};

PhantomSlice render_slice(const SubjectProfile& profile, double level,
                          const PhantomConfig& config = {});

/// Profile drawn reproducibly from (subject_id, cohort_seed).
SubjectProfile make_profile(int subject_id, std::uint64_t cohort_seed);

struct Cohort {
  std::uint64_t cohort_seed = 0;
  double target_level = 0.5;
  std::vector<SubjectProfile> subjects;
  std::vector<std::vector<double>> visit_levels;  // per subject

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

/// Longitudinal cohort: visit levels clamp(target_level + N(0, level_jitter^2), 0, 1).
Cohort make_cohort(int n_subjects, int visits_per_subject, double level_jitter,
                   std::uint64_t cohort_seed, double target_level = 0.5);

/// Evenly spaced levels 0, 1/(n-1), ..., 1.
std::vector<double> level_grid(int n_levels);

/// Muscle-wall cross-section as a fraction of its level-0 value (1 - v/4).
double muscle_area_schedule(double level);
/// Visceral fat cross-section as a fraction of its level-0 value (1 + v/2).
double visceral_area_schedule(double level);

}  // namespace slicegen
