#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rano/common.hpp"

namespace rano {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Treatment-response label. The four trainable classes keep a fixed index
/// order everywhere: PD=0, SD=1, PR=2, CR=3.
enum class RanoLabel : int { PD = 0, SD = 1, PR = 2, CR = 3, PreOp, PostOp, Unlabeled };

constexpr int kNumClasses = 4;

inline bool is_trainable(RanoLabel l) { return static_cast<int>(l) < kNumClasses; }
std::string to_string(RanoLabel l);
std::optional<RanoLabel> parse_rano_label(std::string label_text);

enum class Modality : int { CT1 = 0, T1W = 1, T2W = 2, FLAIR = 3 };

std::string to_string(Modality m);
std::optional<Modality> parse_modality(const std::string& s);

/// Set of modalities with a canonical order (CT1 < T1W < T2W < FLAIR) so that
/// equality, serialization and channel layout are all bit-stable.
class ModalitySet {
 public:
  ModalitySet() = default;
  ModalitySet(std::initializer_list<Modality> ms) {
    for (auto m : ms) insert(m);
  }

  void insert(Modality m) { mask_ |= bit(m); }
  bool contains(Modality m) const { return mask_ & bit(m); }
  bool contains_all(ModalitySet other) const { return (mask_ & other.mask_) == other.mask_; }
  bool is_subset_of(ModalitySet other) const { return other.contains_all(*this); }
  bool empty() const { return mask_ == 0; }
  int count() const;

  /// Members in canonical order.
  std::vector<Modality> list() const;

  std::string str() const;  // e.g. "CT1+FLAIR"
  static std::optional<ModalitySet> parse(const std::string& s);
  static ModalitySet all();

  bool operator==(const ModalitySet&) const = default;
  auto operator<=>(const ModalitySet&) const = default;

 private:
  static uint8_t bit(Modality m) { return static_cast<uint8_t>(1u << static_cast<int>(m)); }
  uint8_t mask_ = 0;
};

/// One imaging session of one patient.
struct TimepointRecord {
  std::string patient_id;
  int week = 0;  // weeks since first surgery reference of the dataset; may be negative pre-op
  RanoLabel label = RanoLabel::Unlabeled;
  ModalitySet available;
  std::map<Modality, std::filesystem::path> image_paths;  // keys exactly == available
};

/// A consecutive-timepoint pair; the unit of training. Labeled by `curr`.
struct StudySample {
  std::string patient_id;
  TimepointRecord prev;
  TimepointRecord curr;
  ModalitySet modalities;
  RanoLabel label = RanoLabel::Unlabeled;

  std::string id() const {
    return patient_id + ":" + std::to_string(prev.week) + ":" + std::to_string(curr.week);
  }
};

enum class Sex { M, F };
enum class IdhStatus { wildtype, IDH1_negative, mutant, missing };
enum class MgmtStatus { methylated, unmethylated, missing };

/// Per-patient clinical features. Missing categorical values are an explicit
/// level, never silently imputed. Survival time is carried but excluded from
/// the default model input (it leaks outcome information).
struct ClinicalVector {
  double age_at_surgery = 0.0;
  Sex sex = Sex::M;
  IdhStatus idh = IdhStatus::missing;
  MgmtStatus mgmt = MgmtStatus::missing;
  std::optional<double> survival_weeks;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct IndexIssue {
  std::string context;  // e.g. "metadata row 12" or "patient-003/week-20"
  std::string message;
};

struct DatasetIndex {
  std::vector<TimepointRecord> records;          // grouped by patient, week-ascending
  std::map<std::string, int> surgery_week;       // patients with a known surgery week
  std::vector<IndexIssue> issues;                // record-level problems (not fatal)
};

/// Walks `<root>/<patient>/week-<k>/<modality>.nii[.gz]` and joins it with the
/// metadata table (columns: patient_id, week, rano, surgery_week). Every
/// imaging session on disk appears exactly once; sessions without any
/// recognized modality file keep an empty `available` set. Malformed metadata
/// rows become issues; a duplicate (patient, week) is a hard error.
DatasetIndex index_dataset(const std::filesystem::path& root,
                           const std::filesystem::path& metadata_table);

/// Clinical table columns: patient_id, age_at_surgery, sex, idh, mgmt
/// (optional survival_weeks). Unparseable categorical cells degrade to the
/// explicit `missing` level with an issue; a missing/invalid age is an issue
/// dropping the row.
std::map<std::string, ClinicalVector> load_clinical(const std::filesystem::path& table,
                                                    std::vector<IndexIssue>* issues = nullptr);

/// Removes PreOp/PostOp/Unlabeled records, records closer than
/// `min_gap_weeks` after surgery, and records without any modality. Patients
/// without a surgery week lose all their records (logged). Order preserved.
std::vector<TimepointRecord> filter_timepoints(const std::vector<TimepointRecord>& records,
                                               const std::map<std::string, int>& surgery_week,
                                               int min_gap_weeks = 13);

/// Pairs adjacent filtered timepoints of each patient (week order). A pair
/// yields one StudySample only when both endpoints carry `modalities`; an
/// intermediate filtered session that lacks them breaks adjacency rather than
/// being skipped over.
std::vector<StudySample> pair_consecutive(const std::vector<TimepointRecord>& filtered,
                                          ModalitySet modalities);

struct CohortSummary {
  std::array<int64_t, kNumClasses> counts{};
  std::array<double, kNumClasses> prevalence{};
  int64_t total = 0;
};

/// Class counts and prevalences over a sample list; throws on empty input.
CohortSummary cohort_summary(const std::vector<StudySample>& samples);

/// Label census over timepoint records (pre-filter view of the dataset);
/// non-trainable labels are ignored.
std::array<int64_t, kNumClasses> label_census(const std::vector<TimepointRecord>& records);

// Cohort manifest: one StudySample per line (JSON), consumed by all
// downstream modules.
void write_manifest(const std::vector<StudySample>& samples, const std::filesystem::path& path);
std::vector<StudySample> read_manifest(const std::filesystem::path& path);

}  // namespace rano
