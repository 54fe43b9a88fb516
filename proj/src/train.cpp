#include "rano/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "rano/csv.hpp"
#include "rano/nifti.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rano::train {

void TrainConfig::validate() const {
  if (lr <= 0 || weight_decay < 0 || batch_size < 1 || max_epochs < 1 || patience < 1 ||
      lr_decay_factor <= 1) {
    throw Error("train config: all values must be positive (and decay factor > 1)");
  }
  if (patience >= max_epochs) throw Error("train config: patience must be < max_epochs");
}

std::string to_string(StopReason r) {
  return r == StopReason::early_stop ? "early_stop" : "max_epochs";
}

void write_trainlog(const TrainLog& log, const fs::path& path) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back(json{{"train_loss", e.train_loss},
                          {"test_loss", e.test_loss},
                          {"lr", e.lr},
                          {"wall_seconds", e.wall_seconds}});
  }
  json j{{"epochs", epochs},
         {"best_epoch", log.best_epoch},
         {"stop_reason", to_string(log.stop_reason)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write train log: " + path.string());
  out << j.dump(2) << "\n";
}

TrainLog read_trainlog(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read train log: " + path.string());
  json j = json::parse(in);
  TrainLog log;
  for (const auto& e : j.at("epochs")) {
    log.epochs.push_back(EpochLog{e.at("train_loss").get<double>(), e.at("test_loss").get<double>(),
                                  e.at("lr").get<double>(), e.at("wall_seconds").get<double>()});
  }
  log.best_epoch = j.at("best_epoch").get<int>();
  log.stop_reason =
      j.at("stop_reason").get<std::string>() == "early_stop" ? StopReason::early_stop
                                                             : StopReason::max_epochs;
  return log;
}

TrainScheduler::TrainScheduler(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.lr) {
  cfg.validate();
}

bool TrainScheduler::observe(double train_loss, double test_loss) {
  // learning-rate rule: strict-decrease comparison against the previous epoch
  if (epoch_ > 0 && !(train_loss < prev_train_)) {
    lr_ /= cfg_.lr_decay_factor;
  }
  prev_train_ = train_loss;

  // early stopping: counter resets on every strict test-loss improvement
  if (epoch_ == 0 || test_loss < best_test_) {
    best_test_ = test_loss;
    best_epoch_ = epoch_;
    stale_epochs_ = 0;
    last_improved_ = true;
  } else {
    ++stale_epochs_;
    last_improved_ = false;
  }

  ++epoch_;
  if (stale_epochs_ >= cfg_.patience) {
    stop_reason_ = StopReason::early_stop;
    return true;
  }
  if (epoch_ >= cfg_.max_epochs) {
    stop_reason_ = StopReason::max_epochs;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Loss & optimizer
// ---------------------------------------------------------------------------

LossResult weighted_cross_entropy(const nn::Tensor& logits, const std::vector<int>& labels,
                                  const std::vector<double>& class_weights) {
  const int64_t n = logits.dim(0);
  const int64_t k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) throw Error("loss: label count mismatch");

  LossResult res;
  res.grad_logits = nn::Tensor::zeros(logits.shape);
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw Error("loss: label out of range");
    double mx = -1e300;
    for (int64_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(logits.at2(i, c)));
    double z = 0;
    for (int64_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(logits.at2(i, c)) - mx);
    const double logp_y = static_cast<double>(logits.at2(i, y)) - mx - std::log(z);
    const double w = class_weights[static_cast<size_t>(y)];
    total += -w * logp_y;
    for (int64_t c = 0; c < k; ++c) {
      const double p = std::exp(static_cast<double>(logits.at2(i, c)) - mx) / z;
      const double onehot = c == y ? 1.0 : 0.0;
      res.grad_logits.at2(i, c) = static_cast<float>(w * (p - onehot) / static_cast<double>(n));
    }
  }
  res.loss = total / static_cast<double>(n);
  return res;
}

Adam::Adam(std::vector<nn::Parameter*> params, double weight_decay, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (nn::Parameter* p : params_) {
    m_.push_back(nn::Tensor::zeros(p->value.shape));
    v_.push_back(nn::Tensor::zeros(p->value.shape));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    nn::Parameter& p = *params_[pi];
    float* theta = p.value.ptr();
    const float* grad = p.grad.ptr();
    float* m = m_[pi].ptr();
    float* v = v_[pi].ptr();
    const int64_t n = p.value.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(grad[i]) + weight_decay_ * theta[i];
      m[i] = static_cast<float>(beta1_ * m[i] + (1 - beta1_) * g);
      v[i] = static_cast<float>(beta2_ * v[i] + (1 - beta2_) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch plumbing
// ---------------------------------------------------------------------------

namespace {

struct Batch {
  nn::Tensor x;         // (N, C, D, H, W)
  nn::Tensor clinical;  // (N, K) or empty
  std::vector<int> labels;
  std::vector<std::string> ids;
};

// sampling::augment works on VolumeGrid channels; adapt the (C,D,H,W) tensor.
void augment_tensor(nn::Tensor& channels, const sampling::AugmentationPolicy& policy,
                    std::mt19937_64& rng) {
  const int64_t c = channels.dim(0);
  const std::array<int64_t, 3> dims{channels.dim(1), channels.dim(2), channels.dim(3)};
  const int64_t vox = dims[0] * dims[1] * dims[2];
  std::vector<VolumeGrid> grids(static_cast<size_t>(c));
  for (int64_t i = 0; i < c; ++i) {
    grids[static_cast<size_t>(i)].dims = dims;
    grids[static_cast<size_t>(i)].voxels.assign(channels.ptr() + i * vox,
                                                channels.ptr() + (i + 1) * vox);
  }
  sampling::augment(grids, policy, rng);
  for (int64_t i = 0; i < c; ++i) {
    std::copy(grids[static_cast<size_t>(i)].voxels.begin(),
              grids[static_cast<size_t>(i)].voxels.end(), channels.ptr() + i * vox);
  }
}

Batch make_batch(const SampleSource& source, const std::vector<int64_t>& indices,
                 const sampling::AugmentationPolicy* policy, int64_t epoch) {
  Batch b;
  const int64_t n = static_cast<int64_t>(indices.size());
  for (int64_t i = 0; i < n; ++i) {
    TrainingSample s = source.get(indices[static_cast<size_t>(i)]);
    if (policy) {
      auto rng = sampling::augment_rng(policy->seed, s.id, epoch);
      augment_tensor(s.channels, *policy, rng);
    }
    if (i == 0) {
      b.x = nn::Tensor::zeros({n, s.channels.dim(0), s.channels.dim(1), s.channels.dim(2),
                               s.channels.dim(3)});
      if (!s.clinical.empty()) {
        b.clinical = nn::Tensor::zeros({n, static_cast<int64_t>(s.clinical.size())});
      }
    }
    std::copy(s.channels.data.begin(), s.channels.data.end(),
              b.x.ptr() + i * s.channels.numel());
    if (!s.clinical.empty()) {
      std::copy(s.clinical.begin(), s.clinical.end(), b.clinical.ptr() + i * b.clinical.dim(1));
    }
    b.labels.push_back(s.label);
    b.ids.push_back(s.id);
  }
  return b;
}

std::vector<double> fold_class_weights(const SampleSource& train_set, int n_classes) {
  std::array<int64_t, kNumClasses> counts{};
  for (int64_t i = 0; i < train_set.size(); ++i) {
    const int y = train_set.label(i);
    if (y >= 0 && y < kNumClasses) counts[y]++;
  }
  const auto w4 = sampling::compute_class_loss_weights(counts);
  std::vector<double> w(static_cast<size_t>(n_classes), 1.0);
  for (int c = 0; c < kNumClasses && c < n_classes; ++c) w[static_cast<size_t>(c)] = w4[c];
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// train_fold
// ---------------------------------------------------------------------------

TrainLog train_fold(nn::Network& net, const SampleSource& train_set, const SampleSource& test_set,
                    const TrainConfig& cfg, const sampling::AugmentationPolicy& augment_policy,
                    std::ostream* progress) {
  cfg.validate();
  if (train_set.size() == 0 || test_set.size() == 0) {
    throw Error("train_fold: empty train or test split");
  }
  {
    std::set<std::string> train_ids;
    for (int64_t i = 0; i < train_set.size(); ++i) train_ids.insert(train_set.id(i));
    for (int64_t i = 0; i < test_set.size(); ++i) {
      if (train_ids.count(test_set.id(i))) {
        throw Error("train_fold: sample " + test_set.id(i) + " appears in both splits");
      }
    }
  }

  // training-split prevalences drive both the sampler (Eq 1) and the loss
  std::array<int64_t, kNumClasses> counts{};
  std::map<std::string, int64_t> index_of;
  for (int64_t i = 0; i < train_set.size(); ++i) {
    counts[train_set.label(i)]++;
    index_of[train_set.id(i)] = i;
  }
  const int64_t n_train = train_set.size();
  sampling::SampleWeighting weighting;
  {
    std::array<double, kNumClasses> prevalence{};
    for (int c = 0; c < kNumClasses; ++c) {
      prevalence[c] = static_cast<double>(counts[c]) / static_cast<double>(n_train);
    }
    int present = 0;
    for (double p : prevalence) present += p > 0 ? 1 : 0;
    if (present < 2) throw Error("train_fold: training split holds a single class");
    weighting.prevalence = prevalence;
    for (int64_t i = 0; i < n_train; ++i) {
      weighting.weights[train_set.id(i)] = 1.0 - prevalence[train_set.label(i)];
    }
  }
  const std::vector<double> class_weights = fold_class_weights(train_set, net.n_classes());

  Adam adam(net.trainable_parameters(), cfg.weight_decay);
  TrainScheduler scheduler(cfg);
  TrainLog log;

  std::vector<nn::Tensor> best_weights;
  auto snapshot = [&] {
    best_weights.clear();
    for (nn::Parameter* p : net.parameters()) best_weights.push_back(p->value);
  };
  auto restore = [&] {
    if (best_weights.empty()) return;
    auto params = net.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_weights[i];
  };

  for (int epoch = 0;; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduler.lr();

    // one "virtual epoch": n_train weighted draws with replacement
    const auto draw_ids =
        sampling::weighted_draw(weighting, n_train, derive_seed(cfg.seed, "epoch-draw", epoch));
    double train_loss_sum = 0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n_train; start += cfg.batch_size) {
      std::vector<int64_t> indices;
      for (int64_t i = start; i < std::min<int64_t>(n_train, start + cfg.batch_size); ++i) {
        indices.push_back(index_of.at(draw_ids[static_cast<size_t>(i)]));
      }
      Batch b = make_batch(train_set, indices, &augment_policy, epoch);
      net.zero_grad();
      const nn::Tensor logits =
          net.forward(b.x, b.clinical.empty() ? nullptr : &b.clinical, /*train=*/true);
      const LossResult loss = weighted_cross_entropy(logits, b.labels, class_weights);
      if (!std::isfinite(loss.loss)) {
        std::string ids;
        for (const auto& id : b.ids) ids += (ids.empty() ? "" : ",") + id;
        throw Error("train_fold: non-finite loss at epoch " + std::to_string(epoch) +
                    " (lr=" + std::to_string(lr) + ", batch=[" + ids + "])");
      }
      net.backward(loss.grad_logits);
      adam.step(lr);
      train_loss_sum += loss.loss;
      ++batches;
    }
    const double train_loss = train_loss_sum / static_cast<double>(std::max<int64_t>(1, batches));

    const EvalResult test = evaluate(net, test_set, class_weights, cfg.batch_size);
    const double test_loss = test.mean_loss;

    const bool stop = scheduler.observe(train_loss, test_loss);
    if (scheduler.last_was_improvement()) snapshot();

    const auto t1 = std::chrono::steady_clock::now();
    EpochLog e;
    e.train_loss = train_loss;
    e.test_loss = test_loss;
    e.lr = lr;
    e.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    log.epochs.push_back(e);
    if (progress) {
      (*progress) << "epoch " << epoch << " train_loss=" << train_loss
                  << " test_loss=" << test_loss << " lr=" << lr << " ("
                  << e.wall_seconds << "s)\n";
    }
    if (stop) break;
  }

  log.best_epoch = scheduler.best_epoch();
  log.stop_reason = scheduler.stop_reason();
  restore();
  return log;
}

EvalResult evaluate(nn::Network& net, const SampleSource& set,
                    const std::vector<double>& class_weights, int64_t batch_size) {
  EvalResult res;
  double loss_sum = 0;
  int64_t batches = 0;
  for (int64_t start = 0; start < set.size(); start += batch_size) {
    std::vector<int64_t> indices;
    for (int64_t i = start; i < std::min<int64_t>(set.size(), start + batch_size); ++i) {
      indices.push_back(i);
    }
    Batch b = make_batch(set, indices, nullptr, 0);
    const nn::Tensor logits =
        net.forward(b.x, b.clinical.empty() ? nullptr : &b.clinical, /*train=*/false);
    const LossResult loss = weighted_cross_entropy(logits, b.labels, class_weights);
    loss_sum += loss.loss;
    ++batches;
    for (size_t i = 0; i < indices.size(); ++i) {
      const auto out = models::model_output(logits, static_cast<int64_t>(i));
      res.ids.push_back(b.ids[i]);
      res.truths.push_back(b.labels[i]);
      res.predictions.push_back(out.predicted);
      res.outputs.push_back(out);
    }
  }
  res.mean_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, batches));
  return res;
}

// ---------------------------------------------------------------------------
// Rotations & pretraining
// ---------------------------------------------------------------------------

namespace {

struct Rotation {
  std::array<int, 3> perm;   // output axis a reads input axis perm[a]
  std::array<int, 3> flip;   // whether that input axis is reversed
};

// the 24 proper rotations of the cube as signed axis permutations
const std::vector<Rotation>& cube_rotations() {
  static const std::vector<Rotation> rots = [] {
    std::vector<Rotation> out;
    std::array<int, 3> perm{0, 1, 2};
    std::sort(perm.begin(), perm.end());
    do {
      // permutation parity
      int inversions = 0;
      for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) inversions += perm[i] > perm[j];
      }
      const int perm_sign = inversions % 2 == 0 ? 1 : -1;
      for (int f = 0; f < 8; ++f) {
        const std::array<int, 3> flip{f & 1, (f >> 1) & 1, (f >> 2) & 1};
        const int flip_sign = (flip[0] + flip[1] + flip[2]) % 2 == 0 ? 1 : -1;
        if (perm_sign * flip_sign == 1) out.push_back({perm, flip});
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return rots;
}

// shape-preserving subset: identity and the three 180-degree rotations
const std::vector<Rotation>& planar_rotations() {
  static const std::vector<Rotation> rots = {
      {{0, 1, 2}, {0, 0, 0}},
      {{0, 1, 2}, {0, 1, 1}},  // 180 about axis 0
      {{0, 1, 2}, {1, 0, 1}},  // 180 about axis 1
      {{0, 1, 2}, {1, 1, 0}},  // 180 about axis 2
  };
  return rots;
}

}  // namespace

int rotation_count(const std::array<int64_t, 3>& dims, int requested) {
  const bool cube = dims[0] == dims[1] && dims[1] == dims[2];
  const int max_rot = cube ? 24 : 4;
  if (requested == 24 || requested <= 0) return max_rot;
  if (requested == 4) return 4;
  if (requested > max_rot) return max_rot;
  return requested;
}

void apply_rotation(nn::Tensor& channels, int rotation) {
  const int64_t c = channels.dim(0);
  const std::array<int64_t, 3> in{channels.dim(1), channels.dim(2), channels.dim(3)};
  const bool cube = in[0] == in[1] && in[1] == in[2];
  const auto& rots = cube ? cube_rotations() : planar_rotations();
  const Rotation& r = rots[static_cast<size_t>(rotation) % rots.size()];

  std::array<int64_t, 3> out{in[r.perm[0]], in[r.perm[1]], in[r.perm[2]]};
  nn::Tensor result = nn::Tensor::zeros({c, out[0], out[1], out[2]});
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* src = channels.ptr() + ch * in[0] * in[1] * in[2];
    float* dst = result.ptr() + ch * out[0] * out[1] * out[2];
    std::array<int64_t, 3> o;
    for (o[0] = 0; o[0] < out[0]; ++o[0]) {
      for (o[1] = 0; o[1] < out[1]; ++o[1]) {
        for (o[2] = 0; o[2] < out[2]; ++o[2]) {
          std::array<int64_t, 3> iidx{};
          for (int a = 0; a < 3; ++a) {
            const int64_t v = r.flip[a] ? out[a] - 1 - o[a] : o[a];
            iidx[r.perm[a]] = v;
          }
          dst[(o[0] * out[1] + o[1]) * out[2] + o[2]] =
              src[(iidx[0] * in[1] + iidx[1]) * in[2] + iidx[2]];
        }
      }
    }
  }
  channels = std::move(result);
}

std::string to_string(PretrainKind k) {
  switch (k) {
    case PretrainKind::None: return "none";
    case PretrainKind::RotationSelfSupervised: return "rotation";
    case PretrainKind::OrganClassification: return "organ";
    default: return "checkpoint";
  }
}

std::optional<PretrainKind> parse_pretrain_kind(const std::string& s) {
  if (s == "none" || s.empty()) return PretrainKind::None;
  if (s == "rotation" || s == "self-supervised") return PretrainKind::RotationSelfSupervised;
  if (s == "organ" || s == "medmnist") return PretrainKind::OrganClassification;
  if (s == "checkpoint" || s == "medicalnet" || s == "external") return PretrainKind::ExternalCheckpoint;
  return std::nullopt;
}

namespace {

// supervised pretext loop shared by the rotation and organ tasks; returns
// last-epoch training accuracy
double pretext_train(nn::Network& net, const SampleSource& data, int epochs, double lr,
                     int64_t batch_size, uint64_t seed,
                     const std::function<TrainingSample(TrainingSample, std::mt19937_64&)>& relabel) {
  Adam adam(net.trainable_parameters(), 0.0);
  const std::vector<double> uniform(static_cast<size_t>(net.n_classes()), 1.0);
  double accuracy = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(seed, "pretext", static_cast<uint64_t>(epoch)));
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);

    int64_t correct = 0, total = 0;
    for (int64_t start = 0; start < data.size(); start += batch_size) {
      std::vector<TrainingSample> items;
      for (int64_t i = start; i < std::min<int64_t>(data.size(), start + batch_size); ++i) {
        items.push_back(relabel(data.get(order[static_cast<size_t>(i)]), rng));
      }
      const int64_t n = static_cast<int64_t>(items.size());
      nn::Tensor x = nn::Tensor::zeros({n, items[0].channels.dim(0), items[0].channels.dim(1),
                                        items[0].channels.dim(2), items[0].channels.dim(3)});
      std::vector<int> labels;
      for (int64_t i = 0; i < n; ++i) {
        std::copy(items[static_cast<size_t>(i)].channels.data.begin(),
                  items[static_cast<size_t>(i)].channels.data.end(),
                  x.ptr() + i * items[0].channels.numel());
        labels.push_back(items[static_cast<size_t>(i)].label);
      }
      net.zero_grad();
      const nn::Tensor logits = net.forward(x, nullptr, true);
      const LossResult loss = weighted_cross_entropy(logits, labels, uniform);
      if (!std::isfinite(loss.loss)) throw Error("pretext training diverged (non-finite loss)");
      net.backward(loss.grad_logits);
      adam.step(lr);
      for (int64_t i = 0; i < n; ++i) {
        const auto out = models::model_output(logits, i);
        correct += out.predicted == labels[static_cast<size_t>(i)];
        ++total;
      }
    }
    accuracy = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(1, total));
  }
  return accuracy;
}

class OrganCorpusSource : public SampleSource {
 public:
  OrganCorpusSource(const fs::path& dir, int* n_classes_out) {
    const Table t = read_delim(dir / "labels.csv");
    t.require_columns({"file", "label"});
    const size_t cf = *t.col("file"), cl = *t.col("label");
    int max_label = -1;
    for (size_t r = 0; r < t.rows.size(); ++r) {
      TrainingSample s;
      s.id = t.cell(r, cf);
      s.label = std::stoi(t.cell(r, cl));
      max_label = std::max(max_label, s.label);
      const VolumeGrid v = read_nifti(dir / t.cell(r, cf));
      s.channels = nn::Tensor::zeros({1, v.dims[0], v.dims[1], v.dims[2]});
      std::copy(v.voxels.begin(), v.voxels.end(), s.channels.ptr());
      samples_.push_back(std::move(s));
    }
    if (samples_.empty()) throw Error("organ corpus is empty: " + dir.string());
    *n_classes_out = max_label + 1;
  }
  int64_t size() const override { return static_cast<int64_t>(samples_.size()); }
  TrainingSample get(int64_t i) const override { return samples_[static_cast<size_t>(i)]; }
  int label(int64_t i) const override { return samples_[static_cast<size_t>(i)].label; }
  std::string id(int64_t i) const override { return samples_[static_cast<size_t>(i)].id; }

 private:
  std::vector<TrainingSample> samples_;
};

}  // namespace

PretrainResult pretrain(nn::Network& net, const PretrainTask& task,
                        const SampleSource* cohort_volumes, uint64_t seed, int final_classes) {
  PretrainResult res;
  switch (task.kind) {
    case PretrainKind::None:
      return res;  // Xavier weights untouched

    case PretrainKind::RotationSelfSupervised: {
      if (!cohort_volumes || cohort_volumes->size() == 0) {
        throw Error("rotation pretraining needs unlabeled cohort volumes");
      }
      const TrainingSample probe = cohort_volumes->get(0);
      const std::array<int64_t, 3> dims{probe.channels.dim(1), probe.channels.dim(2),
                                        probe.channels.dim(3)};
      const int n_rot = rotation_count(dims, task.n_rotations);
      res.task_classes = n_rot;
      net.reset_head(n_rot, derive_seed(seed, "rotation-head"));
      res.task_accuracy = pretext_train(
          net, *cohort_volumes, task.epochs, task.lr, 4, seed,
          [n_rot](TrainingSample s, std::mt19937_64& rng) {
            const int rot = static_cast<int>(rng() % static_cast<uint64_t>(n_rot));
            apply_rotation(s.channels, rot);
            s.label = rot;
            return s;
          });
      break;
    }

    case PretrainKind::OrganClassification: {
      int n_organ = 0;
      OrganCorpusSource corpus(task.source, &n_organ);
      res.task_classes = n_organ;
      const TrainingSample probe = corpus.get(0);
      const int64_t model_ch = net.in_channels();
      if (probe.channels.dim(0) != model_ch && probe.channels.dim(0) != 1) {
        throw Error("organ corpus channel count (" + std::to_string(probe.channels.dim(0)) +
                    ") does not match the model (" + std::to_string(model_ch) + ")");
      }
      net.reset_head(n_organ, derive_seed(seed, "organ-head"));
      // single-channel corpora are tiled across the model's input channels
      res.task_accuracy = pretext_train(
          net, corpus, task.epochs, task.lr, 4, seed,
          [model_ch](TrainingSample s, std::mt19937_64&) {
            if (s.channels.dim(0) == model_ch) return s;
            nn::Tensor tiled = nn::Tensor::zeros(
                {model_ch, s.channels.dim(1), s.channels.dim(2), s.channels.dim(3)});
            for (int64_t c = 0; c < model_ch; ++c) {
              std::copy(s.channels.data.begin(), s.channels.data.end(),
                        tiled.ptr() + c * s.channels.numel());
            }
            s.channels = std::move(tiled);
            return s;
          });
      break;
    }

    case PretrainKind::ExternalCheckpoint: {
      res.matched_fraction = models::load_backbone_weights(net, task.source);
      break;
    }
  }
  net.reset_head(final_classes, derive_seed(seed, "final-head"));
  return res;
}

}  // namespace rano::train
