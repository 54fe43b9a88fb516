#pragma once

// Test-only helpers: a synthetic LUMIERE-shaped dataset writer whose ground
// truth is enumerated by construction, plus brute-force oracles kept
// independent of the library code paths they check.

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rano/cohort.hpp"
#include "rano/train.hpp"
#include "rano/volume.hpp"

namespace rano::testsupport {

struct FixtureSession {
  std::string patient_id;
  int week = 0;
  std::string label;                    // as written to the metadata table
  std::vector<std::string> modalities;  // filenames written, e.g. "CT1", "FLAIR"
};

struct FixtureTruth {
  std::vector<FixtureSession> sessions;
  std::map<std::string, int> surgery_week;  // patients that have one
  std::filesystem::path metadata_csv;
  std::filesystem::path clinical_csv;
};

struct FixtureSpec {
  int n_patients = 10;
  int min_sessions = 2;
  int max_sessions = 8;
  uint64_t seed = 1;
  std::array<int64_t, 3> vol_dims{6, 6, 6};
  double missing_surgery_prob = 0.1;
};

/// Writes `<root>/<patient>/week-<k>/<modality>.nii.gz` plus metadata and
/// clinical tables. All randomness comes from spec.seed.
FixtureTruth write_lumiere_fixture(const std::filesystem::path& root, const FixtureSpec& spec);

/// A fixed 3-patient / 7-session layout with hand-enumerated modality sets.
FixtureTruth write_small_fixture(const std::filesystem::path& root);

// --- brute-force oracles (plain loops, no shared code with rano::cohort) ---

/// Re-applies the three exclusion rules naively.
std::vector<TimepointRecord> oracle_filter(const std::vector<TimepointRecord>& records,
                                           const std::map<std::string, int>& surgery_week,
                                           int min_gap_weeks);

struct OraclePair {
  std::string patient_id;
  int prev_week;
  int curr_week;
  RanoLabel label;
};

/// Enumerates adjacent pairs per patient over the filtered list and keeps the
/// ones where both endpoints carry the modality set.
std::vector<OraclePair> oracle_pairs(const std::vector<TimepointRecord>& filtered,
                                     ModalitySet modalities);

/// Random in-memory cohort (no disk) for property tests.
std::vector<TimepointRecord> random_records(std::mt19937_64& rng, int n_patients,
                                            std::map<std::string, int>* surgery_week);

/// Random volume with values drawn from N(mean, stddev).
VolumeGrid random_volume(std::array<int64_t, 3> dims, std::mt19937_64& rng, float mean = 0.f,
                         float stddev = 1.f);

/// Two-class separable toy samples: class 0 carries a bright blob in the
/// low corner, class 1 in the high corner, plus mild noise. Labels are 0/1
/// (PD/SD) so 4-class heads stay valid.
std::vector<rano::train::TrainingSample> toy_separable_samples(int n,
                                                               std::array<int64_t, 3> dims,
                                                               uint64_t seed);

}  // namespace rano::testsupport
