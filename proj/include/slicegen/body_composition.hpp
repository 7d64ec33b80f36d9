#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicegen/image.hpp"
#include "slicegen/model.hpp"
#include "slicegen/phantom.hpp"

namespace slicegen {

struct FcmConfig {
  std::size_t c = 3;  // adipose / soft tissue / dense tissue, over body pixels
  double m = 2.0;
  double tol = 1e-5;  // on the largest centroid move
  int max_iter = 200;
  std::uint64_t seed = 0;  // unused by the quantile initialisation, kept for reproducible manifests

  void validate() const;
};

struct Membership {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<double> u;          // n x c, row-major
  std::vector<double> centroids;  // ascending
  std::vector<double> objective;  // J after each centroid update
  int iterations = 0;
  bool converged = false;

  double at(std::size_t i, std::size_t j) const { return u[i * c + j]; }
  /// Cluster with the largest membership; lowest index on ties.
  std::size_t hard_label(std::size_t i) const;
};

/// Fuzzy c-means on scalar intensities. Centroids start at the c quantiles
/// (i + 0.5) / c of the data, or of its distinct values when those collide.
Membership fcm_cluster(std::span<const double> pixels, const FcmConfig& config = {});

/// J = sum_i sum_j u_ij^m (x_i - c_j)^2.
double fcm_objective(std::span<const double> pixels, const Membership& membership, double m);

/// Upper intensity accepted for an adipose cluster centroid (-30 HU).
inline constexpr double kAdiposeCentroidMax = 0.2375;
/// Pixels at or below this intensity count as air.
inline constexpr double kBackgroundLevel = 0.04;

struct AdiposeSegmentation {
  Mask visceral_fat;
  bool empty_inner_wall = false;
  std::optional<double> adipose_centroid;  // none when no cluster qualifies
};

/// FCM over the body pixels (above kBackgroundLevel); visceral fat = pixels
/// hardened to the darkest cluster that lie inside the inner wall, provided
/// that cluster's centroid is adipose-like.
AdiposeSegmentation segment_adipose_detailed(const Image& image, const Mask& inner_wall,
                                             const FcmConfig& config = {});
Mask segment_adipose(const Image& image, const Mask& inner_wall, const FcmConfig& config = {});

struct MuscleBand {
  double low = 0.40;
  double high = 0.50;
  double min_radius = 0.55;   // normalised distance from the body centre
  double wall_quantile = 0.05;  // inner-wall edge, as a quantile of muscle radii
};

/// Normalised elliptical radius of every pixel with respect to the body's bounding box.
std::vector<double> body_radius(const Image& image);
Mask body_mask(const Image& image);
/// Muscle on an image without ground truth: intensity band restricted to the outer ring of the body.
Mask muscle_band_mask(const Image& image, const MuscleBand& band = {});
/// Body pixels inside the detected muscle ring.
Mask estimate_inner_wall(const Image& image, const Mask& muscle, const MuscleBand& band = {});

struct Areas {
  double muscle = 0.0;
  double visceral_fat = 0.0;
};

double mask_area(const Mask& mask, double pixel_area);
Areas measure_areas(const Mask& muscle, const Mask& visceral_fat, double pixel_area);

enum class AreaSource { original, generated };
std::string to_string(AreaSource source);

struct HarmonizationRow {
  int subject_id = 0;
  int visit = 0;
  double level = 0.0;
  AreaSource source = AreaSource::original;
  double muscle_area = 0.0;
  double visceral_fat_area = 0.0;
  bool empty_inner_wall = false;
};

struct SubjectSpread {
  int subject_id = 0;
  double muscle_std_original = 0.0;
  double muscle_std_generated = 0.0;
  double visceral_std_original = 0.0;
  double visceral_std_generated = 0.0;
};

struct HarmonizationReport {
  std::vector<HarmonizationRow> rows;
  std::vector<SubjectSpread> subjects;
  std::optional<double> muscle_ratio;    // median std_generated / std_original
  std::optional<double> visceral_ratio;
};

struct HarmonizeConfig {
  PhantomConfig phantom;
  FcmConfig fcm;
  MuscleBand band;
  std::uint64_t seed = 0;  // z_prior draws, one stream per (subject, visit)
  unsigned threads = 1;
};

/// Population standard deviation.
double population_std(std::span<const double> values);
/// Median over subjects of generated/original spread, skipping subjects with zero original spread.
std::optional<double> median_reduction_ratio(std::span<const double> original, std::span<const double> generated);

HarmonizationReport harmonize_cohort(const Cohort& cohort, const CSliceGen<float>& model,
                                     const HarmonizeConfig& config = {});

/// Per-visit images and masks from a harmonization run, for inspection.
struct VisitArtifacts {
  int subject_id = 0;
  int visit = 0;
  Image original;
  Image generated;
  Mask generated_muscle;
  Mask generated_visceral_fat;
};

HarmonizationReport harmonize_cohort(const Cohort& cohort, const CSliceGen<float>& model,
                                     const HarmonizeConfig& config, std::vector<VisitArtifacts>* artifacts);

}  // namespace slicegen
