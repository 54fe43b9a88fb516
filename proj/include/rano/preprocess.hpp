#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rano/cohort.hpp"
#include "rano/volume.hpp"

namespace rano::prep {

/// Permutes/flips axes so the orientation code becomes RAS. The voxel
/// multiset is unchanged. Throws when the volume carries no orientation.
VolumeGrid reorient(const VolumeGrid& v);

struct BiasOptions {
  int iterations = 3;
  /// Smoothing sigma per iteration as a fraction of the largest physical extent.
  double sigma_scale = 0.25;
};

/// Multiplicative low-frequency bias removal: iteratively subtracts the
/// masked low-pass component of the log image (the field is mean-centered so
/// overall intensity scale is preserved). All-zero input is returned
/// unchanged with a warning.
VolumeGrid correct_bias(const VolumeGrid& v, const BiasOptions& opts = {});

struct DenoiseOptions {
  double sigma_voxels = 1.0;
};

/// Gaussian noise removal by separable Gaussian smoothing with border
/// renormalization (constants pass through unchanged).
VolumeGrid denoise(const VolumeGrid& v, const DenoiseOptions& opts = {});

struct RegistrationOptions {
  int max_sweeps = 150;          // coordinate-descent sweeps per stage/level
  double subsample = 2.0;        // metric sampling stride at full resolution
  double min_step = 1e-3;        // convergence threshold on the step size
  bool allow_affine = true;      // rigid-only when false
};

/// Template-voxel -> moving-voxel affine map used for resampling.
struct AffineTransform {
  // physical (mm) coords: x_moving = linear * x_template + offset
  std::array<std::array<double, 3>, 3> linear{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  std::array<double, 3> offset{0, 0, 0};
};

struct RegistrationResult {
  bool ok = false;
  std::string reason;      // set when !ok
  VolumeGrid resampled;    // template grid, space_tag = template
  AffineTransform transform;
  double initial_msd = 0.0;
  double final_msd = 0.0;
};

/// Rigid+affine registration of `v` onto `tmpl` (center-of-mass
/// initialization, multi-resolution coordinate descent on a mean-squared
/// metric, trilinear resampling). Both inputs must be reoriented.
/// Non-convergence flags the result instead of throwing.
RegistrationResult register_to_template(const VolumeGrid& v, const VolumeGrid& tmpl,
                                        const RegistrationOptions& opts = {});

/// Z-score normalization over the support mask (voxels != 0); background
/// stays zero. Throws on a constant support region.
VolumeGrid znormalize(const VolumeGrid& v);

/// Voxel-wise curr - prev; metadata copied from curr. Shape mismatch throws.
VolumeGrid subtract(const VolumeGrid& curr, const VolumeGrid& prev);

// ---------------------------------------------------------------------------
// Cached pipeline
// ---------------------------------------------------------------------------

struct PreprocessOptions {
  BiasOptions bias;
  DenoiseOptions denoise;
  RegistrationOptions registration;
  std::string pipeline_version = "prep-1";
};

struct StepLog {
  std::string step;
  double millis = 0.0;
  std::string flag;  // empty = ok
};

struct VolumeOutcome {
  bool ok = false;
  bool cached = false;
  std::string reason;
  std::filesystem::path output;
  std::vector<StepLog> steps;
};

/// Runs reorient -> bias -> denoise -> register -> znormalize for one file,
/// caching by (input content hash, pipeline version, template hash). A cache
/// hit skips all work.
class PreprocessCache {
 public:
  PreprocessCache(std::filesystem::path cache_dir, std::filesystem::path template_path,
                  PreprocessOptions opts = {});

  VolumeOutcome process(const std::filesystem::path& input);
  const VolumeGrid& grid_template() const { return template_; }
  /// Cache path a given input would map to (whether or not it exists yet).
  std::filesystem::path cache_path(const std::filesystem::path& input) const;

 private:
  std::filesystem::path dir_;
  PreprocessOptions opts_;
  VolumeGrid template_;
  uint64_t template_hash_ = 0;
};

struct CohortPreprocessReport {
  std::map<std::string, std::string> excluded;  // sample id -> reason
  std::map<std::string, std::filesystem::path> volume_outputs;  // source path -> cache path
  int processed = 0;
  int cache_hits = 0;
};

/// Preprocesses every volume referenced by the samples and writes a log table
/// (one row per volume: step, duration, flag) to `log_csv` when non-empty.
/// Samples with any failed volume are excluded with a reason.
CohortPreprocessReport preprocess_cohort(const std::vector<StudySample>& samples,
                                         PreprocessCache& cache,
                                         const std::filesystem::path& log_csv = {});

}  // namespace rano::prep
