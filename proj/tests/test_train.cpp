#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "rano/nn/architectures.hpp"
#include "rano/nifti.hpp"
#include "rano/train.hpp"
#include "support/fixtures.hpp"

using namespace rano;
using namespace rano::train;
namespace ts = rano::testsupport;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// scheduler (scripted sequences)
// ---------------------------------------------------------------------------

TEST_CASE("early stopping triggers after exactly 10 non-improving test epochs") {
  TrainConfig cfg;
  cfg.seed = 1;
  TrainScheduler sched(cfg);
  // epochs 0..4 improve; epochs 5..14 are flat
  std::vector<double> test_losses;
  for (int e = 0; e < 5; ++e) test_losses.push_back(1.0 - 0.1 * e);
  for (int e = 0; e < 10; ++e) test_losses.push_back(0.9);

  bool stopped = false;
  int stop_epoch = -1;
  for (size_t e = 0; e < test_losses.size(); ++e) {
    stopped = sched.observe(0.5, test_losses[e]);
    if (stopped) {
      stop_epoch = static_cast<int>(e);
      break;
    }
  }
  CHECK(stopped);
  CHECK(stop_epoch == 14);  // the 10th consecutive non-improvement
  CHECK(sched.best_epoch() == 4);
  CHECK(sched.stop_reason() == StopReason::early_stop);
}

TEST_CASE("the early-stop counter resets on every strict improvement") {
  TrainConfig cfg;
  TrainScheduler sched(cfg);
  // 9 flat epochs, one improvement, then 9 more flat: must not stop
  CHECK(!sched.observe(0.5, 1.0));
  for (int e = 0; e < 9; ++e) CHECK(!sched.observe(0.5, 1.0));
  CHECK(!sched.observe(0.5, 0.8));  // reset
  for (int e = 0; e < 9; ++e) CHECK(!sched.observe(0.5, 0.9));
  CHECK(sched.observe(0.5, 0.9));  // the 10th
  CHECK(sched.best_epoch() == 10);
}

TEST_CASE("lr divides by 10 on every non-decreasing train-loss epoch") {
  TrainConfig cfg;
  TrainScheduler sched(cfg);
  CHECK(sched.lr() == doctest::Approx(1e-4));
  sched.observe(1.00, 1.0);  // first epoch: no comparison
  CHECK(sched.lr() == doctest::Approx(1e-4));
  sched.observe(1.00, 0.9);  // equal: not a decrease
  CHECK(sched.lr() == doctest::Approx(1e-5));
  sched.observe(1.10, 0.8);  // increase
  CHECK(sched.lr() == doctest::Approx(1e-6));
  sched.observe(1.20, 0.7);  // increase
  CHECK(sched.lr() == doctest::Approx(1e-7));
  sched.observe(0.50, 0.6);  // strict decrease: no change
  CHECK(sched.lr() == doctest::Approx(1e-7));
}

TEST_CASE("max-epochs stop reason when the loss keeps improving") {
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.patience = 3;
  TrainScheduler sched(cfg);
  bool stopped = false;
  for (int e = 0; e < 5; ++e) stopped = sched.observe(1.0 - 0.1 * e, 1.0 - 0.1 * e);
  CHECK(stopped);
  CHECK(sched.stop_reason() == StopReason::max_epochs);
  CHECK(sched.best_epoch() == 4);
}

TEST_CASE("train config validation") {
  TrainConfig bad;
  bad.patience = 200;
  CHECK_THROWS_AS(bad.validate(), Error);
  TrainConfig neg;
  neg.lr = -1;
  CHECK_THROWS_AS(neg.validate(), Error);
}

// ---------------------------------------------------------------------------
// loss & optimizer
// ---------------------------------------------------------------------------

TEST_CASE("weighted cross-entropy equals 4x the unweighted loss at uniform weights 4") {
  nn::Tensor logits = nn::Tensor::zeros({2, 4});
  logits.data = {0.3f, -0.1f, 0.9f, 0.0f, 1.2f, 0.4f, -0.7f, 0.2f};
  const std::vector<int> labels{2, 0};

  // hand-rolled oracle
  auto ce = [&](int64_t row, int y) {
    double mx = -1e300;
    for (int64_t c = 0; c < 4; ++c) mx = std::max(mx, (double)logits.at2(row, c));
    double z = 0;
    for (int64_t c = 0; c < 4; ++c) z += std::exp((double)logits.at2(row, c) - mx);
    return -((double)logits.at2(row, y) - mx - std::log(z));
  };
  const double unweighted = (ce(0, 2) + ce(1, 0)) / 2.0;

  const auto res = weighted_cross_entropy(logits, labels, {4.0, 4.0, 4.0, 4.0});
  CHECK(res.loss == doctest::Approx(4.0 * unweighted).epsilon(1e-9));

  // per-class weights scale each sample's term
  const auto res2 = weighted_cross_entropy(logits, labels, {2.0, 1.0, 0.5, 1.0});
  CHECK(res2.loss == doctest::Approx((0.5 * ce(0, 2) + 2.0 * ce(1, 0)) / 2.0).epsilon(1e-9));
}

TEST_CASE("cross-entropy gradient agrees with finite differences") {
  nn::Tensor logits = nn::Tensor::zeros({2, 4});
  logits.data = {0.3f, -0.1f, 0.9f, 0.0f, 1.2f, 0.4f, -0.7f, 0.2f};
  const std::vector<int> labels{1, 3};
  const std::vector<double> w{1.5, 5.0, 16.7, 14.3};
  const auto res = weighted_cross_entropy(logits, labels, w);

  const double h = 1e-3;
  for (int64_t i = 0; i < 8; ++i) {
    nn::Tensor lp = logits, lm = logits;
    lp.data[static_cast<size_t>(i)] += static_cast<float>(h);
    lm.data[static_cast<size_t>(i)] -= static_cast<float>(h);
    const double fd = (weighted_cross_entropy(lp, labels, w).loss -
                       weighted_cross_entropy(lm, labels, w).loss) /
                      (2 * h);
    CHECK(res.grad_logits.data[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-3));
  }
}

TEST_CASE("one adam step matches the hand-computed update") {
  nn::Parameter p;
  p.name = "w";
  p.value = nn::Tensor::full({2}, 1.0f);
  p.grad = nn::Tensor::zeros({2});
  p.grad.data = {0.5f, -0.25f};

  const double wd = 0.01, lr = 1e-2;
  Adam adam({&p}, wd);
  adam.step(lr);

  for (int i = 0; i < 2; ++i) {
    const double g = (i == 0 ? 0.5 : -0.25) + wd * 1.0;
    const double m = 0.1 * g, v = 0.001 * g * g;
    const double mhat = m / 0.1, vhat = v / 0.001;  // t = 1 bias correction
    const double expect = 1.0 - lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.value.data[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-6));
  }
}

// ---------------------------------------------------------------------------
// train_fold on the separable toy cohort
// ---------------------------------------------------------------------------

namespace {

InMemorySource toy_source(int n, uint64_t seed) {
  return InMemorySource(ts::toy_separable_samples(n, {8, 8, 8}, seed));
}

}  // namespace

TEST_CASE("train_fold overfits the separable toy cohort and logs correctly") {
  auto train_set = toy_source(24, 1);
  auto test_set = toy_source(8, 2);

  nn::AlexNet3d net(1, 0, 4, /*dropout=*/0.0);
  net.init_weights(42);

  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.patience = 29;
  cfg.lr = 3e-4;
  cfg.seed = 7;

  std::ostringstream progress;
  const TrainLog log = train_fold(net, train_set, test_set, cfg,
                                  sampling::AugmentationPolicy::disabled(), &progress);

  REQUIRE(!log.epochs.empty());
  CHECK(log.epochs.size() <= 30);
  // best epoch attains the minimum test loss over completed epochs
  double min_loss = 1e300;
  int argmin = -1;
  for (size_t e = 0; e < log.epochs.size(); ++e) {
    if (log.epochs[e].test_loss < min_loss) {
      min_loss = log.epochs[e].test_loss;
      argmin = static_cast<int>(e);
    }
  }
  CHECK(log.best_epoch == argmin);
  CHECK(progress.str().find("epoch 0") != std::string::npos);

  const auto eval = evaluate(net, train_set, {1, 1, 1, 1});
  int64_t correct = 0;
  for (size_t i = 0; i < eval.predictions.size(); ++i) {
    correct += eval.predictions[i] == eval.truths[i];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(eval.predictions.size()) >= 0.95);
}

TEST_CASE("identical seeds give identical train logs; train/test overlap is rejected") {
  auto train_set = toy_source(12, 3);
  auto test_set = toy_source(4, 4);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience = 3;
  cfg.seed = 99;

  TrainLog a, b;
  {
    nn::AlexNet3d net(1, 0, 4, 0.5);
    net.init_weights(5);
    a = train_fold(net, train_set, test_set, cfg, sampling::AugmentationPolicy::disabled());
  }
  {
    nn::AlexNet3d net(1, 0, 4, 0.5);
    net.init_weights(5);
    b = train_fold(net, train_set, test_set, cfg, sampling::AugmentationPolicy::disabled());
  }
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(std::fabs(a.epochs[e].train_loss - b.epochs[e].train_loss) < 1e-5);
    CHECK(std::fabs(a.epochs[e].test_loss - b.epochs[e].test_loss) < 1e-5);
  }
  CHECK(a.best_epoch == b.best_epoch);

  nn::AlexNet3d net(1, 0, 4, 0.0);
  net.init_weights(5);
  CHECK_THROWS_WITH_AS(
      train_fold(net, train_set, train_set, cfg, sampling::AugmentationPolicy::disabled()),
      doctest::Contains("both splits"), Error);
}

TEST_CASE("train log round-trips through its file form") {
  TrainLog log;
  log.epochs = {{1.0, 2.0, 1e-4, 0.5}, {0.9, 1.8, 1e-4, 0.4}};
  log.best_epoch = 1;
  log.stop_reason = StopReason::early_stop;
  const auto path = fs::temp_directory_path() / "rano_trainlog.json";
  write_trainlog(log, path);
  const auto back = read_trainlog(path);
  CHECK(back.best_epoch == 1);
  CHECK(back.stop_reason == StopReason::early_stop);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[1].train_loss == doctest::Approx(0.9));
}

// ---------------------------------------------------------------------------
// rotations & pretraining
// ---------------------------------------------------------------------------

TEST_CASE("rotations permute voxels, rotation 0 is the identity, all 24 are distinct") {
  std::mt19937_64 rng(6);
  nn::Tensor base = nn::Tensor::zeros({1, 4, 4, 4});
  for (int64_t i = 0; i < base.numel(); ++i) base.data[static_cast<size_t>(i)] = static_cast<float>(i);

  nn::Tensor t0 = base;
  apply_rotation(t0, 0);
  CHECK(t0.data == base.data);

  std::set<std::vector<float>> variants;
  for (int r = 0; r < 24; ++r) {
    nn::Tensor t = base;
    apply_rotation(t, r);
    auto sorted = t.data;
    std::sort(sorted.begin(), sorted.end());
    auto orig = base.data;
    std::sort(orig.begin(), orig.end());
    CHECK(sorted == orig);  // exact voxel permutation, no interpolation
    variants.insert(t.data);
  }
  CHECK(variants.size() == 24);
}

TEST_CASE("non-cubic grids fall back to the 4 shape-preserving rotations") {
  CHECK(rotation_count({8, 8, 8}, 24) == 24);
  CHECK(rotation_count({8, 8, 6}, 24) == 4);
  CHECK(rotation_count({8, 8, 8}, 4) == 4);

  nn::Tensor t = nn::Tensor::zeros({1, 3, 4, 5});
  for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = static_cast<float>(i);
  for (int r = 0; r < 4; ++r) {
    nn::Tensor u = t;
    apply_rotation(u, r);
    CHECK(u.shape == t.shape);
  }
}

TEST_CASE("pretrain kind none leaves the Xavier weights hash-equal") {
  nn::AlexNet3d net(1, 0, 4, 0.0);
  net.init_weights(11);
  uint64_t before = 0;
  for (auto* p : net.parameters()) before ^= p->value.content_hash();

  PretrainTask task;  // kind == None
  nn::AlexNet3d untouched(1, 0, 4, 0.0);
  untouched.init_weights(11);
  const auto res = pretrain(untouched, task, nullptr, 3);
  CHECK(res.task_classes == 0);
  uint64_t after = 0;
  for (auto* p : untouched.parameters()) after ^= p->value.content_hash();
  CHECK(before == after);
}

TEST_CASE("rotation pretraining on asymmetric phantoms beats chance and resets the head") {
  // strongly asymmetric volumes: a bright slab on one face
  std::vector<TrainingSample> vols;
  for (int i = 0; i < 16; ++i) {
    TrainingSample s;
    s.id = "v" + std::to_string(i);
    s.label = 0;
    s.channels = nn::Tensor::zeros({1, 8, 8, 8});
    for (int64_t z = 0; z < 2; ++z) {
      for (int64_t y = 0; y < 8; ++y) {
        for (int64_t x = 0; x < 8; ++x) {
          s.channels.data[static_cast<size_t>((z * 8 + y) * 8 + x)] = 1.0f + 0.01f * i;
        }
      }
    }
    vols.push_back(std::move(s));
  }
  InMemorySource cohort(std::move(vols));

  nn::AlexNet3d net(1, 0, 4, 0.0);
  net.init_weights(21);
  PretrainTask task;
  task.kind = PretrainKind::RotationSelfSupervised;
  task.n_rotations = 4;
  task.epochs = 12;
  task.lr = 1e-3;
  const auto res = pretrain(net, task, &cohort, 9);
  CHECK(res.task_classes == 4);
  CHECK(res.task_accuracy > 1.0 / 4.0);  // above chance
  CHECK(net.n_classes() == 4);           // head reset for the downstream task
}

TEST_CASE("organ-classification pretraining consumes a labeled corpus directory") {
  const fs::path dir = fs::temp_directory_path() / "rano_organ";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(31);
  std::ofstream labels(dir / "labels.csv");
  labels << "file,label\n";
  for (int i = 0; i < 8; ++i) {
    const int cls = i % 2;
    VolumeGrid v = ts::random_volume({8, 8, 8}, rng, cls ? 2.0f : -2.0f, 0.3f);
    const std::string name = "vol" + std::to_string(i) + ".nii.gz";
    write_nifti(v, dir / name);
    labels << name << "," << cls << "\n";
  }
  labels.close();

  nn::AlexNet3d net(1, 0, 4, 0.0);
  net.init_weights(41);
  PretrainTask task;
  task.kind = PretrainKind::OrganClassification;
  task.source = dir;
  task.epochs = 6;
  task.lr = 1e-3;
  const auto res = pretrain(net, task, nullptr, 17);
  CHECK(res.task_classes == 2);
  CHECK(res.task_accuracy > 0.5);
  CHECK(net.n_classes() == 4);
}
