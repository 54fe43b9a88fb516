#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rano/models.hpp"
#include "rano/nn/network.hpp"
#include "rano/sampling.hpp"

namespace rano::train {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  int64_t batch_size = 4;
  int max_epochs = 100;
  int patience = 10;
  double lr_decay_factor = 10.0;
  uint64_t seed = 0;

  void validate() const;
};

enum class StopReason { early_stop, max_epochs };
std::string to_string(StopReason r);

struct EpochLog {
  double train_loss = 0.0;
  double test_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;  // 0-based argmin of test loss
  StopReason stop_reason = StopReason::max_epochs;
};

void write_trainlog(const TrainLog& log, const std::filesystem::path& path);
TrainLog read_trainlog(const std::filesystem::path& path);

/// The paper's epoch-level control flow, isolated so scripted loss sequences
/// can drive it: the learning rate divides by `lr_decay_factor` whenever the
/// train loss fails to strictly decrease, and training stops once the test
/// loss has not strictly improved for `patience` consecutive epochs. The two
/// mechanisms are independent.
class TrainScheduler {
 public:
  explicit TrainScheduler(const TrainConfig& cfg);

  /// Feed one epoch's mean losses; returns true when training must stop.
  bool observe(double train_loss, double test_loss);

  double lr() const { return lr_; }  // rate for the next epoch
  bool last_was_improvement() const { return last_improved_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return epoch_; }
  StopReason stop_reason() const { return stop_reason_; }

 private:
  TrainConfig cfg_;
  double lr_;
  int epoch_ = 0;
  int best_epoch_ = -1;
  double best_test_ = 0.0;
  double prev_train_ = 0.0;
  int stale_epochs_ = 0;
  bool last_improved_ = false;
  StopReason stop_reason_ = StopReason::max_epochs;
};

// ---------------------------------------------------------------------------
// Loss & optimizer
// ---------------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  nn::Tensor grad_logits;
};

/// Mean over the batch of w[y_i] * (-log softmax(z_i)[y_i]). With uniform
/// weights w == 4 this equals 4x the unweighted mean cross-entropy.
LossResult weighted_cross_entropy(const nn::Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<double>& class_weights);

/// Adam with the coupled L2 weight-decay convention (decay added to the raw
/// gradient before the moment updates).
class Adam {
 public:
  Adam(std::vector<nn::Parameter*> params, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<nn::Tensor> m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Data access
// ---------------------------------------------------------------------------

struct TrainingSample {
  std::string id;
  int label = 0;
  nn::Tensor channels;          // (C, D, H, W)
  std::vector<float> clinical;  // empty when unused
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual int64_t size() const = 0;
  virtual TrainingSample get(int64_t i) const = 0;
  virtual int label(int64_t i) const = 0;
  virtual std::string id(int64_t i) const = 0;
};

class InMemorySource : public SampleSource {
 public:
  explicit InMemorySource(std::vector<TrainingSample> samples) : samples_(std::move(samples)) {}
  int64_t size() const override { return static_cast<int64_t>(samples_.size()); }
  TrainingSample get(int64_t i) const override { return samples_[static_cast<size_t>(i)]; }
  int label(int64_t i) const override { return samples_[static_cast<size_t>(i)].label; }
  std::string id(int64_t i) const override { return samples_[static_cast<size_t>(i)].id; }

 private:
  std::vector<TrainingSample> samples_;
};

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

/// One cross-validation fold: Eq-1 weighted sampling over the training split,
/// class-weighted cross-entropy from training-split prevalences, Adam, the
/// scheduler above, and best-test-loss model selection (the best epoch's
/// weights are restored into `net` before returning). One progress line per
/// epoch goes to `progress` when given.
TrainLog train_fold(nn::Network& net, const SampleSource& train_set, const SampleSource& test_set,
                    const TrainConfig& cfg,
                    const sampling::AugmentationPolicy& augment_policy,
                    std::ostream* progress = nullptr);

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<int> truths;
  std::vector<int> predictions;
  std::vector<models::ModelOutput> outputs;
  double mean_loss = 0.0;
};

EvalResult evaluate(nn::Network& net, const SampleSource& set,
                    const std::vector<double>& class_weights, int64_t batch_size = 4);

// ---------------------------------------------------------------------------
// Pretraining tasks
// ---------------------------------------------------------------------------

enum class PretrainKind { None, RotationSelfSupervised, OrganClassification, ExternalCheckpoint };
std::string to_string(PretrainKind k);
std::optional<PretrainKind> parse_pretrain_kind(const std::string& s);

struct PretrainTask {
  PretrainKind kind = PretrainKind::None;
  std::filesystem::path source;  // checkpoint file or labeled-corpus directory
  int n_rotations = 24;          // 24 proper rotations, or the 4 shape-safe ones
  int epochs = 5;
  double lr = 1e-4;
};

struct PretrainResult {
  double task_accuracy = 0.0;   // last-epoch training accuracy on the pretext task
  int task_classes = 0;
  double matched_fraction = 0.0;  // ExternalCheckpoint only
};

/// Applies one pretraining task in place. Every path ends with a fresh
/// classification head for `final_classes`. `cohort_volumes` feeds the
/// rotation task; the organ task reads `task.source`/labels.csv with
/// `file,label` columns naming volumes in that directory.
PretrainResult pretrain(nn::Network& net, const PretrainTask& task,
                        const SampleSource* cohort_volumes, uint64_t seed,
                        int final_classes = kNumClasses);

/// The proper axis-aligned rotations of a cube as (axis permutation, flips);
/// `count` is 24, or 4 when the grid is not a cube (180-degree rotations only,
/// which preserve any shape).
int rotation_count(const std::array<int64_t, 3>& dims, int requested);
void apply_rotation(nn::Tensor& channels, int rotation);  // (C, D, H, W) in place

}  // namespace rano::train
