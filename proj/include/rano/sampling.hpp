#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rano/cohort.hpp"
#include "rano/volume.hpp"

namespace rano::sampling {

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

struct FoldPlan {
  int n_folds = 5;
  uint64_t seed = 0;
  bool grouped_by_patient = false;
  std::map<std::string, int> assignments;  // sample id -> fold index
  std::vector<std::array<int64_t, kNumClasses>> per_fold_class_counts;
  std::vector<std::string> warnings;

  std::vector<std::string> fold_test_ids(int fold) const;
  std::vector<std::string> fold_train_ids(int fold) const;
};

/// Stratified assignment: per class, a seeded shuffle dealt round-robin with a
/// rotating start, so per-fold counts of every class differ by at most one.
/// Classes with fewer samples than folds are spread best-effort and noted in
/// `warnings`. With `group_by_patient` all samples of a patient land in one
/// fold (greedy balancing; the per-class invariant is then best-effort too).
FoldPlan make_folds(const std::vector<StudySample>& samples, int n_folds, uint64_t seed,
                    bool group_by_patient = false);

void write_foldplan(const FoldPlan& plan, const std::filesystem::path& path);
FoldPlan read_foldplan(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Imbalance-aware sampling
// ---------------------------------------------------------------------------

struct SampleWeighting {
  std::map<std::string, double> weights;             // sample id -> 1 - P(class)
  std::array<double, kNumClasses> prevalence{};
};

/// W(s) = 1 - P(class(s)). Throws when every class but one is empty (all
/// weights would be zero and the sampler would degenerate).
SampleWeighting compute_sample_weights(const std::vector<StudySample>& samples,
                                       const std::array<double, kNumClasses>& prevalence);

/// n draws with replacement, probability proportional to weight; the id order
/// backing the cumulative table is the (sorted) map order, so results are
/// platform-stable for a given seed.
std::vector<std::string> weighted_draw(const SampleWeighting& weighting, int64_t n, uint64_t seed);

/// Per-class loss weights 1/P(c) from training-split counts. A zero-count
/// class triggers add-one smoothing on all counts (logged).
std::array<double, kNumClasses> compute_class_loss_weights(
    const std::array<int64_t, kNumClasses>& counts);

/// Same, from prevalences directly; requires every prevalence > 0.
std::array<double, kNumClasses> compute_class_loss_weights(
    const std::array<double, kNumClasses>& prevalence);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationPolicy {
  double flip_prob_per_axis = 0.5;
  double intensity_scale_prob = 0.9;
  double intensity_scale_factor = 0.1;
  double contrast_prob = 0.9;
  std::array<double, 2> gamma_range{0.7, 1.5};
  double noise_prob = 0.9;
  double noise_mean = 0.0;
  double noise_std = 0.1;
  uint64_t seed = 0;

  void validate() const;  // throws on out-of-range fields
  static AugmentationPolicy disabled();
};

/// What a single augment() call actually did; lets callers log and tests
/// verify against elementwise oracles.
struct AppliedAugmentations {
  std::array<bool, 3> flipped{false, false, false};
  bool scaled = false;
  double scale_factor = 1.0;  // multiplier actually applied
  bool contrast = false;
  double gamma = 1.0;
  bool noised = false;
};

/// Independent per-sample random stream derived from (policy seed, sample id,
/// epoch); safe to call concurrently across samples.
std::mt19937_64 augment_rng(uint64_t policy_seed, const std::string& sample_id, int64_t epoch);

/// Applies flips (identically to every channel), intensity scaling, gamma
/// contrast and additive Gaussian noise per the policy. Shape and channel
/// count never change.
AppliedAugmentations augment(std::vector<VolumeGrid>& channels, const AugmentationPolicy& policy,
                             std::mt19937_64& rng);

}  // namespace rano::sampling
