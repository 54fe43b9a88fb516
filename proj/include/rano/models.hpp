#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "rano/cohort.hpp"
#include "rano/nn/network.hpp"
#include "rano/volume.hpp"

namespace rano::models {

enum class ArchitectureId { Densenet121, Densenet169, Densenet264, ViT3D, AlexNet3D };

std::string to_string(ArchitectureId a);
std::optional<ArchitectureId> parse_architecture(const std::string& s);

/// How a StudySample becomes channels: each modality contributes either its
/// (prev, curr) pair or a single curr-prev subtraction image, in canonical
/// modality order.
struct InputSpec {
  ModalitySet modalities;
  bool use_subtraction = false;
  bool use_clinical = false;

  int64_t channel_count() const {
    return use_subtraction ? modalities.count() : 2 * modalities.count();
  }
};

/// Architecture knobs the study keeps fixed; defaults are desk-scale.
struct ModelHyperparams {
  std::array<int64_t, 3> input_dhw{16, 16, 16};
  int64_t vit_patch = 8;
  int64_t vit_dim = 96;
  int vit_depth = 4;
  int vit_heads = 4;
  double vit_mlp_ratio = 2.0;
  double alexnet_dropout = 0.5;
  bool include_survival = false;  // survival leaks outcome; off unless overridden
};

int64_t clinical_dim(bool include_survival);
int64_t clinical_dim(const InputSpec& spec, const ModelHyperparams& hp);

/// Instantiates the architecture with Xavier-normal weights seeded by
/// `init_seed`. Unknown channel/clinical arrangements are taken from `spec`.
std::unique_ptr<nn::Network> build_model(ArchitectureId arch, const InputSpec& spec,
                                         uint64_t init_seed, const ModelHyperparams& hp = {},
                                         int n_classes = kNumClasses);

struct ModelOutput {
  std::array<double, kNumClasses> logits{};
  std::array<double, kNumClasses> probabilities{};
  int predicted = 0;
};

/// Softmax view of one logits row.
ModelOutput model_output(const nn::Tensor& logits, int64_t row);

// ---------------------------------------------------------------------------
// Clinical encoding: [age_z, sex(M,F), idh(wildtype, IDH1_negative, mutant,
// missing), mgmt(methylated, unmethylated, missing)] (+ survival_z when
// enabled). Age is z-scored with training-fold statistics.
// ---------------------------------------------------------------------------

struct ClinicalStats {
  double age_mean = 0.0;
  double age_std = 1.0;
  bool include_survival = false;
  double survival_mean = 0.0;
  double survival_std = 1.0;
};

ClinicalStats fit_clinical_stats(const std::vector<ClinicalVector>& train_patients,
                                 bool include_survival = false);
std::vector<float> encode_clinical(const ClinicalVector& cv, const ClinicalStats& stats);

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

using VolumeLookup = std::function<VolumeGrid(const std::filesystem::path&)>;

struct AssembledInput {
  std::vector<VolumeGrid> channels;  // template-shaped, canonical order
  std::vector<float> clinical;       // empty unless spec.use_clinical
};

/// Loads the preprocessed volumes of both timepoints through `lookup` and
/// stacks them per the spec. The ground-truth label never influences channel
/// content. Throws when a required volume is missing or shapes disagree.
AssembledInput assemble_input(const StudySample& sample, const InputSpec& spec,
                              const VolumeLookup& lookup,
                              const ClinicalVector* clinical = nullptr,
                              const ClinicalStats* stats = nullptr);

/// (C,D,H,W) tensor from stacked channels.
nn::Tensor channels_to_tensor(const std::vector<VolumeGrid>& channels);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  ArchitectureId arch = ArchitectureId::Densenet121;
  InputSpec spec;
  uint64_t init_seed = 0;
  std::string config_hash;
  int fold = -1;
  int n_classes = kNumClasses;
};

void save_checkpoint(nn::Network& net, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Strict load: every tensor must match by name and shape, metadata must be
/// complete, and the network must be fully covered.
CheckpointMeta load_checkpoint(nn::Network& net, const std::filesystem::path& path);

/// Pretraining-style partial load: copies every non-head tensor whose name
/// and shape match, returns the matched fraction of the network's backbone
/// tensors (always logged). Fractions below 0.5 are an error - silent partial
/// loads are forbidden.
double load_backbone_weights(nn::Network& net, const std::filesystem::path& path);

}  // namespace rano::models
