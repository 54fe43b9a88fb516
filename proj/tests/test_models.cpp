#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "rano/models.hpp"
#include "rano/nn/architectures.hpp"
#include "support/fixtures.hpp"

using namespace rano;
using namespace rano::models;
namespace ts = rano::testsupport;
namespace fs = std::filesystem;

namespace {

// In-memory "preprocessed cache": path string -> volume
struct FakeStore {
  std::map<std::string, VolumeGrid> volumes;
  VolumeLookup lookup() const {
    return [this](const fs::path& p) {
      auto it = volumes.find(p.string());
      if (it == volumes.end()) throw Error("missing volume " + p.string());
      return it->second;
    };
  }
};

StudySample sample_with_modalities(ModalitySet mods, FakeStore& store,
                                   std::array<int64_t, 3> dims, std::mt19937_64& rng) {
  StudySample s;
  s.patient_id = "P1";
  s.prev.patient_id = s.curr.patient_id = "P1";
  s.prev.week = 20;
  s.curr.week = 33;
  s.label = RanoLabel::SD;
  s.modalities = mods;
  for (Modality m : mods.list()) {
    for (const char* tp : {"prev", "curr"}) {
      const std::string key = std::string(tp) + "/" + to_string(m);
      store.volumes[key] = ts::random_volume(dims, rng);
      if (std::string(tp) == "prev") {
        s.prev.available.insert(m);
        s.prev.image_paths[m] = key;
      } else {
        s.curr.available.insert(m);
        s.curr.image_paths[m] = key;
      }
    }
  }
  return s;
}

}  // namespace

TEST_CASE("input spec channel counts: 8 for four modalities, |M| under subtraction") {
  InputSpec all4;
  all4.modalities = ModalitySet::all();
  CHECK(all4.channel_count() == 8);

  InputSpec sub3;
  sub3.modalities = ModalitySet{Modality::T1W, Modality::T2W, Modality::FLAIR};
  sub3.use_subtraction = true;
  CHECK(sub3.channel_count() == 3);
}

TEST_CASE("assemble_input stacks modality-major, prev before curr") {
  std::mt19937_64 rng(1);
  FakeStore store;
  const auto mods = ModalitySet{Modality::CT1, Modality::FLAIR};
  const auto s = sample_with_modalities(mods, store, {4, 4, 4}, rng);

  InputSpec spec;
  spec.modalities = mods;
  const auto got = assemble_input(s, spec, store.lookup());
  REQUIRE(got.channels.size() == 4);
  CHECK(got.channels[0].voxels == store.volumes.at("prev/CT1").voxels);
  CHECK(got.channels[1].voxels == store.volumes.at("curr/CT1").voxels);
  CHECK(got.channels[2].voxels == store.volumes.at("prev/FLAIR").voxels);
  CHECK(got.channels[3].voxels == store.volumes.at("curr/FLAIR").voxels);
}

TEST_CASE("assemble_input subtraction channel equals curr minus prev elementwise") {
  std::mt19937_64 rng(2);
  FakeStore store;
  const auto mods = ModalitySet{Modality::T1W};
  const auto s = sample_with_modalities(mods, store, {3, 3, 3}, rng);

  InputSpec spec;
  spec.modalities = mods;
  spec.use_subtraction = true;
  const auto got = assemble_input(s, spec, store.lookup());
  REQUIRE(got.channels.size() == 1);
  const auto& prev = store.volumes.at("prev/T1W").voxels;
  const auto& curr = store.volumes.at("curr/T1W").voxels;
  for (size_t i = 0; i < prev.size(); ++i) {
    CHECK(got.channels[0].voxels[i] == curr[i] - prev[i]);
  }
}

TEST_CASE("assembly is label-free") {
  std::mt19937_64 rng(3);
  FakeStore store;
  const auto mods = ModalitySet{Modality::CT1};
  auto s = sample_with_modalities(mods, store, {3, 3, 3}, rng);
  InputSpec spec;
  spec.modalities = mods;
  const auto a = assemble_input(s, spec, store.lookup());
  s.label = RanoLabel::CR;
  const auto b = assemble_input(s, spec, store.lookup());
  for (size_t c = 0; c < a.channels.size(); ++c) CHECK(a.channels[c].voxels == b.channels[c].voxels);
}

TEST_CASE("assemble_input flags a missing preprocessed volume") {
  std::mt19937_64 rng(4);
  FakeStore store;
  auto s = sample_with_modalities(ModalitySet{Modality::CT1}, store, {3, 3, 3}, rng);
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1, Modality::T2W};  // T2W never stored
  CHECK_THROWS_WITH_AS(assemble_input(s, spec, store.lookup()), doctest::Contains("T2W"), Error);
}

TEST_CASE("clinical encoding has the documented layout, including all-missing") {
  ClinicalStats stats;
  stats.age_mean = 60.0;
  stats.age_std = 10.0;

  ClinicalVector cv;
  cv.age_at_surgery = 70.0;
  cv.sex = Sex::F;
  cv.idh = IdhStatus::missing;
  cv.mgmt = MgmtStatus::missing;
  const auto v = encode_clinical(cv, stats);
  REQUIRE(v.size() == 10);
  CHECK(v[0] == doctest::Approx(1.0));                      // age z-score
  CHECK(v[1] == 0.f);                                       // sex M
  CHECK(v[2] == 1.f);                                       // sex F
  CHECK((v[3] == 0.f && v[4] == 0.f && v[5] == 0.f));       // idh levels
  CHECK(v[6] == 1.f);                                       // idh missing
  CHECK((v[7] == 0.f && v[8] == 0.f));                      // mgmt levels
  CHECK(v[9] == 1.f);                                       // mgmt missing

  ClinicalStats with_sv = stats;
  with_sv.include_survival = true;
  with_sv.survival_mean = 80;
  with_sv.survival_std = 40;
  cv.survival_weeks = 120.0;
  const auto v2 = encode_clinical(cv, with_sv);
  REQUIRE(v2.size() == 11);
  CHECK(v2[10] == doctest::Approx(1.0));
}

TEST_CASE("fit_clinical_stats uses training-fold statistics") {
  std::vector<ClinicalVector> train(3);
  train[0].age_at_surgery = 50;
  train[1].age_at_surgery = 60;
  train[2].age_at_surgery = 70;
  const auto stats = fit_clinical_stats(train);
  CHECK(stats.age_mean == doctest::Approx(60.0));
  CHECK(stats.age_std == doctest::Approx(std::sqrt(200.0 / 3.0)));
}

TEST_CASE("every architecture in the registry emits (N, 4) logits on its study channel counts") {
  std::mt19937_64 rng(5);
  ModelHyperparams hp;
  hp.input_dhw = {16, 16, 16};
  hp.vit_dim = 32;
  hp.vit_depth = 1;
  hp.vit_heads = 2;

  // Densenet264 with 6 channels, batch 4 -> (4, 4)
  InputSpec spec6;
  spec6.modalities = ModalitySet{Modality::T1W, Modality::T2W, Modality::FLAIR};
  auto net = build_model(ArchitectureId::Densenet264, spec6, 1, hp);
  nn::Tensor x = nn::Tensor::zeros({4, 6, 16, 16, 16});
  for (auto& v : x.data) v = static_cast<float>(nn::normal01(rng));
  CHECK(net->forward(x, nullptr, false).shape == std::vector<int64_t>({4, 4}));

  // remaining architectures at one channel count each (full grid in acceptance)
  for (auto arch : {ArchitectureId::Densenet121, ArchitectureId::ViT3D, ArchitectureId::AlexNet3D}) {
    InputSpec spec;
    spec.modalities = ModalitySet{Modality::CT1};
    auto m = build_model(arch, spec, 2, hp);
    nn::Tensor y = m->forward(nn::Tensor::full({1, 2, 16, 16, 16}, 0.5f), nullptr, false);
    CHECK(y.shape == std::vector<int64_t>({1, 4}));
  }
}

TEST_CASE("identical init seeds give hash-equal weights; zero and ones inputs differ") {
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1};
  ModelHyperparams hp;
  auto a = build_model(ArchitectureId::Densenet121, spec, 99, hp);
  auto b = build_model(ArchitectureId::Densenet121, spec, 99, hp);
  uint64_t ha = 0, hb = 0;
  for (auto* p : a->parameters()) ha ^= p->value.content_hash();
  for (auto* p : b->parameters()) hb ^= p->value.content_hash();
  CHECK(ha == hb);

  auto c = build_model(ArchitectureId::Densenet121, spec, 100, hp);
  uint64_t hc = 0;
  for (auto* p : c->parameters()) hc ^= p->value.content_hash();
  CHECK(ha != hc);

  const auto y0 = a->forward(nn::Tensor::zeros({1, 2, 16, 16, 16}), nullptr, false);
  const auto y1 = a->forward(nn::Tensor::full({1, 2, 16, 16, 16}, 1.f), nullptr, false);
  CHECK(y0.data != y1.data);
}

TEST_CASE("model_output probabilities sum to one and argmax matches logits") {
  nn::Tensor logits = nn::Tensor::zeros({1, 4});
  logits.data = {1.5f, -0.5f, 3.0f, 0.1f};
  const auto out = model_output(logits, 0);
  double sum = 0;
  for (double p : out.probabilities) sum += p;
  CHECK(std::fabs(sum - 1.0) < 1e-6);
  CHECK(out.predicted == 2);
}

TEST_CASE("perturbing a clinical feature moves the logits") {
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1};
  spec.use_clinical = true;
  ModelHyperparams hp;
  auto net = build_model(ArchitectureId::AlexNet3D, spec, 11, hp);

  std::mt19937_64 rng(6);
  nn::Tensor x = nn::Tensor::zeros({1, 2, 16, 16, 16});
  for (auto& v : x.data) v = static_cast<float>(nn::normal01(rng));
  nn::Tensor clin = nn::Tensor::zeros({1, 10});
  const auto base = net->forward(x, &clin, false);
  nn::Tensor clin2 = clin;
  clin2.at2(0, 0) = 1.0f;
  const auto moved = net->forward(x, &clin2, false);
  double delta = 0;
  for (size_t i = 0; i < 4; ++i) delta += std::fabs(base.data[i] - moved.data[i]);
  CHECK(delta > 1e-6);
}

TEST_CASE("checkpoints round-trip and reject missing fields or foreign tensors") {
  const fs::path dir = fs::temp_directory_path() / "rano_ckpt";
  fs::create_directories(dir);
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1, Modality::FLAIR};
  ModelHyperparams hp;
  auto net = build_model(ArchitectureId::AlexNet3D, spec, 3, hp);

  CheckpointMeta meta;
  meta.arch = ArchitectureId::AlexNet3D;
  meta.spec = spec;
  meta.init_seed = 3;
  meta.config_hash = "cfg-abc";
  meta.fold = 2;
  save_checkpoint(*net, meta, dir / "a.ckpt");

  auto loaded = build_model(ArchitectureId::AlexNet3D, spec, 999, hp);
  const auto meta2 = load_checkpoint(*loaded, dir / "a.ckpt");
  CHECK(meta2.fold == 2);
  CHECK(meta2.config_hash == "cfg-abc");
  CHECK(to_string(meta2.arch) == "AlexNet3D");

  std::mt19937_64 rng(7);
  nn::Tensor x = nn::Tensor::zeros({1, 4, 16, 16, 16});
  for (auto& v : x.data) v = static_cast<float>(nn::normal01(rng));
  const auto ya = net->forward(x, nullptr, false);
  const auto yb = loaded->forward(x, nullptr, false);
  for (size_t i = 0; i < 4; ++i) CHECK(ya.data[i] == yb.data[i]);

  // a different architecture must not accept the checkpoint
  auto other = build_model(ArchitectureId::Densenet121, spec, 1, hp);
  CHECK_THROWS_AS(load_checkpoint(*other, dir / "a.ckpt"), Error);

  // metadata with a field removed is rejected
  CHECK_THROWS_AS(
      [&] {
        std::ifstream in(dir / "a.ckpt", std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = all.find("\"fold\"");
        REQUIRE(pos != std::string::npos);
        std::string broken = all;
        broken.replace(pos, 6, "\"f0ld\"");
        std::ofstream out(dir / "broken.ckpt", std::ios::binary);
        out << broken;
        out.close();
        auto victim = build_model(ArchitectureId::AlexNet3D, spec, 1, hp);
        load_checkpoint(*victim, dir / "broken.ckpt");
      }(),
      Error);
}

TEST_CASE("backbone loading matches same-architecture weights and rejects foreign ones") {
  const fs::path dir = fs::temp_directory_path() / "rano_ckpt2";
  fs::create_directories(dir);
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1};
  ModelHyperparams hp;

  auto src = build_model(ArchitectureId::Densenet121, spec, 5, hp, /*n_classes=*/24);
  CheckpointMeta meta;
  meta.arch = ArchitectureId::Densenet121;
  meta.spec = spec;
  meta.init_seed = 5;
  meta.config_hash = "pretrain";
  meta.fold = -1;
  meta.n_classes = 24;
  save_checkpoint(*src, meta, dir / "rot.ckpt");

  // logged fraction
  std::vector<std::string> infos;
  auto prev = log::set_sink([&](log::Level l, const std::string& m) {
    if (l == log::Level::info) infos.push_back(m);
  });
  auto dst = build_model(ArchitectureId::Densenet121, spec, 77, hp);
  const double fraction = load_backbone_weights(*dst, dir / "rot.ckpt");
  log::set_sink(prev);
  CHECK(fraction == doctest::Approx(1.0));
  REQUIRE(!infos.empty());
  CHECK(infos.back().find("matched") != std::string::npos);

  // backbone weights now identical to the source, head stays 4-class
  auto src_params = src->parameters();
  auto dst_params = dst->parameters();
  for (size_t i = 0; i < src_params.size(); ++i) {
    if (src_params[i]->name.rfind("head.", 0) == 0) continue;
    CHECK(src_params[i]->value.data == dst_params[i]->value.data);
  }
  CHECK(dst->n_classes() == 4);

  auto foreign = build_model(ArchitectureId::AlexNet3D, spec, 1, hp);
  CHECK_THROWS_AS(load_backbone_weights(*foreign, dir / "rot.ckpt"), Error);
}

TEST_CASE("registry parameter counts order the densenet family") {
  InputSpec spec;
  spec.modalities = ModalitySet{Modality::CT1};
  ModelHyperparams hp;
  auto a = build_model(ArchitectureId::Densenet121, spec, 1, hp);
  auto b = build_model(ArchitectureId::Densenet169, spec, 1, hp);
  auto c = build_model(ArchitectureId::Densenet264, spec, 1, hp);
  CHECK(a->parameter_count() < b->parameter_count());
  CHECK(b->parameter_count() < c->parameter_count());
}

TEST_CASE("unknown architecture strings do not parse") {
  CHECK(!parse_architecture("resnet50"));
  CHECK(parse_architecture("Densenet264"));
}
