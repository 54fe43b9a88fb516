#include "rano/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace rano::sampling {

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<std::string> FoldPlan::fold_test_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldPlan::fold_train_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void tally_counts(FoldPlan& plan, const std::vector<StudySample>& samples) {
  plan.per_fold_class_counts.assign(static_cast<size_t>(plan.n_folds), {});
  for (const auto& s : samples) {
    const int fold = plan.assignments.at(s.id());
    plan.per_fold_class_counts[static_cast<size_t>(fold)][static_cast<int>(s.label)]++;
  }
}

}  // namespace

FoldPlan make_folds(const std::vector<StudySample>& samples, int n_folds, uint64_t seed,
                    bool group_by_patient) {
  if (n_folds < 2) throw Error("make_folds: n_folds must be >= 2");
  if (samples.empty()) throw Error("make_folds: empty sample list");
  for (const auto& s : samples) {
    if (!is_trainable(s.label)) throw Error("make_folds: untrainable label in " + s.id());
  }

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.grouped_by_patient = group_by_patient;

  std::mt19937_64 rng(mix64(seed));

  if (!group_by_patient) {
    // per-class shuffle + round-robin with a rotating start offset
    std::array<std::vector<std::string>, kNumClasses> by_class;
    for (const auto& s : samples) by_class[static_cast<int>(s.label)].push_back(s.id());
    int start = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      auto& ids = by_class[c];
      std::sort(ids.begin(), ids.end());
      std::shuffle(ids.begin(), ids.end(), rng);
      if (!ids.empty() && ids.size() < static_cast<size_t>(n_folds)) {
        plan.warnings.push_back("class " + to_string(static_cast<RanoLabel>(c)) + " has only " +
                                std::to_string(ids.size()) + " samples for " +
                                std::to_string(n_folds) + " folds; some folds will lack it");
      }
      for (size_t i = 0; i < ids.size(); ++i) {
        plan.assignments[ids[i]] = (start + static_cast<int>(i)) % n_folds;
      }
      start = (start + static_cast<int>(ids.size())) % n_folds;
    }
  } else {
    // whole patients per fold; greedy size-balanced with class awareness
    std::map<std::string, std::array<int64_t, kNumClasses>> per_patient;
    for (const auto& s : samples) per_patient[s.patient_id][static_cast<int>(s.label)]++;
    std::vector<std::pair<std::string, std::array<int64_t, kNumClasses>>> patients(
        per_patient.begin(), per_patient.end());
    std::shuffle(patients.begin(), patients.end(), rng);
    std::stable_sort(patients.begin(), patients.end(), [](const auto& a, const auto& b) {
      int64_t na = 0, nb = 0;
      for (int c = 0; c < kNumClasses; ++c) {
        na += a.second[c];
        nb += b.second[c];
      }
      return na > nb;
    });
    std::vector<std::array<int64_t, kNumClasses>> totals(static_cast<size_t>(n_folds),
                                                         std::array<int64_t, kNumClasses>{});
    std::map<std::string, int> patient_fold;
    for (const auto& [pid, counts] : patients) {
      int best_fold = 0;
      double best_cost = 1e300;
      for (int f = 0; f < n_folds; ++f) {
        double cost = 0;
        for (int c = 0; c < kNumClasses; ++c) {
          const double v = static_cast<double>(totals[static_cast<size_t>(f)][c] + counts[c]);
          cost += v * v;
        }
        if (cost < best_cost) {
          best_cost = cost;
          best_fold = f;
        }
      }
      patient_fold[pid] = best_fold;
      for (int c = 0; c < kNumClasses; ++c) totals[static_cast<size_t>(best_fold)][c] += counts[c];
    }
    for (const auto& s : samples) plan.assignments[s.id()] = patient_fold.at(s.patient_id);
    plan.warnings.push_back("patient-level grouping: per-class fold balance is best-effort");
  }

  tally_counts(plan, samples);
  for (const auto& w : plan.warnings) log::warn("make_folds: " + w);
  return plan;
}

void write_foldplan(const FoldPlan& plan, const fs::path& path) {
  json j{{"n_folds", plan.n_folds},
         {"seed", plan.seed},
         {"grouped_by_patient", plan.grouped_by_patient},
         {"assignments", plan.assignments},
         {"warnings", plan.warnings}};
  json counts = json::array();
  for (const auto& row : plan.per_fold_class_counts) counts.push_back(row);
  j["per_fold_class_counts"] = counts;
  std::ofstream out(path);
  if (!out) throw Error("cannot write fold plan: " + path.string());
  out << j.dump(2) << "\n";
}

FoldPlan read_foldplan(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read fold plan: " + path.string());
  json j = json::parse(in);
  FoldPlan plan;
  plan.n_folds = j.at("n_folds").get<int>();
  plan.seed = j.at("seed").get<uint64_t>();
  plan.grouped_by_patient = j.at("grouped_by_patient").get<bool>();
  plan.assignments = j.at("assignments").get<std::map<std::string, int>>();
  plan.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const auto& row : j.at("per_fold_class_counts")) {
    std::array<int64_t, kNumClasses> r{};
    for (int c = 0; c < kNumClasses; ++c) r[c] = row.at(c).get<int64_t>();
    plan.per_fold_class_counts.push_back(r);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Weights & sampler
// ---------------------------------------------------------------------------

SampleWeighting compute_sample_weights(const std::vector<StudySample>& samples,
                                       const std::array<double, kNumClasses>& prevalence) {
  double sum = 0;
  for (double p : prevalence) sum += p;
  if (std::fabs(sum - 1.0) > 1e-9) throw Error("compute_sample_weights: prevalences must sum to 1");

  int present = 0;
  for (double p : prevalence) present += p > 0 ? 1 : 0;
  if (present < 2) throw Error("compute_sample_weights: single-class cohort degenerates the sampler");

  SampleWeighting w;
  w.prevalence = prevalence;
  for (const auto& s : samples) {
    w.weights[s.id()] = 1.0 - prevalence[static_cast<int>(s.label)];
  }
  return w;
}

std::vector<std::string> weighted_draw(const SampleWeighting& weighting, int64_t n, uint64_t seed) {
  if (n < 1) throw Error("weighted_draw: n must be >= 1");
  std::vector<const std::string*> ids;
  std::vector<double> cum;
  double total = 0;
  for (const auto& [id, w] : weighting.weights) {
    if (w < 0) throw Error("weighted_draw: negative weight for " + id);
    total += w;
    ids.push_back(&id);
    cum.push_back(total);
  }
  if (total <= 0) throw Error("weighted_draw: no positive weight");

  std::mt19937_64 rng(mix64(seed));
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double u = uniform01(rng) * total;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const size_t idx = std::min(static_cast<size_t>(it - cum.begin()), ids.size() - 1);
    out.push_back(*ids[idx]);
  }
  return out;
}

std::array<double, kNumClasses> compute_class_loss_weights(
    const std::array<int64_t, kNumClasses>& counts) {
  std::array<int64_t, kNumClasses> used = counts;
  bool smoothed = false;
  for (int64_t c : counts) {
    if (c == 0) smoothed = true;
    if (c < 0) throw Error("compute_class_loss_weights: negative count");
  }
  if (smoothed) {
    for (auto& c : used) c += 1;
    log::warn("compute_class_loss_weights: zero-count class; add-one smoothing applied");
  }
  int64_t total = 0;
  for (int64_t c : used) total += c;
  if (total == 0) throw Error("compute_class_loss_weights: empty cohort");
  std::array<double, kNumClasses> w{};
  for (int c = 0; c < kNumClasses; ++c) {
    w[c] = static_cast<double>(total) / static_cast<double>(used[c]);
  }
  return w;
}

std::array<double, kNumClasses> compute_class_loss_weights(
    const std::array<double, kNumClasses>& prevalence) {
  std::array<double, kNumClasses> w{};
  for (int c = 0; c < kNumClasses; ++c) {
    if (prevalence[c] <= 0) throw Error("compute_class_loss_weights: zero prevalence for class " +
                                        to_string(static_cast<RanoLabel>(c)));
    w[c] = 1.0 / prevalence[c];
  }
  return w;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

void AugmentationPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(flip_prob_per_axis) || !prob(intensity_scale_prob) || !prob(contrast_prob) ||
      !prob(noise_prob)) {
    throw Error("augmentation policy: probabilities must lie in [0,1]");
  }
  if (!(gamma_range[0] < gamma_range[1]) || gamma_range[0] <= 0) {
    throw Error("augmentation policy: gamma range must satisfy 0 < low < high");
  }
  if (intensity_scale_factor < 0 || noise_std < 0) {
    throw Error("augmentation policy: scale factor and noise std must be nonnegative");
  }
}

AugmentationPolicy AugmentationPolicy::disabled() {
  AugmentationPolicy p;
  p.flip_prob_per_axis = 0;
  p.intensity_scale_prob = 0;
  p.contrast_prob = 0;
  p.noise_prob = 0;
  return p;
}

std::mt19937_64 augment_rng(uint64_t policy_seed, const std::string& sample_id, int64_t epoch) {
  return std::mt19937_64(derive_seed(policy_seed, sample_id, static_cast<uint64_t>(epoch)));
}

namespace {

void flip_axis(VolumeGrid& v, int axis) {
  const auto d = v.dims;
  VolumeGrid out = v;
  for (int64_t z = 0; z < d[2]; ++z) {
    for (int64_t y = 0; y < d[1]; ++y) {
      for (int64_t x = 0; x < d[0]; ++x) {
        int64_t i[3] = {x, y, z};
        i[axis] = d[axis] - 1 - i[axis];
        out.at(i[0], i[1], i[2]) = v.at(x, y, z);
      }
    }
  }
  v.voxels = std::move(out.voxels);
}

}  // namespace

AppliedAugmentations augment(std::vector<VolumeGrid>& channels, const AugmentationPolicy& policy,
                             std::mt19937_64& rng) {
  policy.validate();
  AppliedAugmentations applied;
  if (channels.empty()) return applied;
  for (const auto& c : channels) {
    if (c.dims != channels[0].dims) throw Error("augment: channel shape mismatch");
  }

  // spatial flips: one draw per axis, shared by every channel
  for (int axis = 0; axis < 3; ++axis) {
    if (uniform01(rng) < policy.flip_prob_per_axis) {
      applied.flipped[axis] = true;
      for (auto& c : channels) flip_axis(c, axis);
    }
  }

  if (uniform01(rng) < policy.intensity_scale_prob) {
    const double u = (uniform01(rng) * 2.0 - 1.0) * policy.intensity_scale_factor;
    applied.scaled = true;
    applied.scale_factor = 1.0 + u;
    for (auto& c : channels) {
      for (auto& x : c.voxels) x = static_cast<float>(x * applied.scale_factor);
    }
  }

  if (uniform01(rng) < policy.contrast_prob) {
    applied.contrast = true;
    applied.gamma = policy.gamma_range[0] + uniform01(rng) * (policy.gamma_range[1] - policy.gamma_range[0]);
    for (auto& c : channels) {
      const auto [mn_it, mx_it] = std::minmax_element(c.voxels.begin(), c.voxels.end());
      const double mn = *mn_it, mx = *mx_it;
      const double range = mx - mn;
      if (range <= 0) continue;
      for (auto& x : c.voxels) {
        const double t = (static_cast<double>(x) - mn) / range;
        x = static_cast<float>(std::pow(t, applied.gamma) * range + mn);
      }
    }
  }

  if (uniform01(rng) < policy.noise_prob) {
    applied.noised = true;
    for (auto& c : channels) {
      for (auto& x : c.voxels) {
        // Box-Muller keeps the stream platform-stable
        const double u1 = std::max(uniform01(rng), 1e-12);
        const double u2 = uniform01(rng);
        const double g = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        x = static_cast<float>(x + policy.noise_mean + policy.noise_std * g);
      }
    }
  }
  return applied;
}

}  // namespace rano::sampling
