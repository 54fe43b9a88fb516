#include "rano/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rano/nn/architectures.hpp"
#include "rano/preprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rano::models {

std::string to_string(ArchitectureId a) {
  switch (a) {
    case ArchitectureId::Densenet121: return "Densenet121";
    case ArchitectureId::Densenet169: return "Densenet169";
    case ArchitectureId::Densenet264: return "Densenet264";
    case ArchitectureId::ViT3D: return "ViT3D";
    default: return "AlexNet3D";
  }
}

std::optional<ArchitectureId> parse_architecture(const std::string& s) {
  if (s == "Densenet121" || s == "densenet121") return ArchitectureId::Densenet121;
  if (s == "Densenet169" || s == "densenet169") return ArchitectureId::Densenet169;
  if (s == "Densenet264" || s == "densenet264") return ArchitectureId::Densenet264;
  if (s == "ViT3D" || s == "ViT" || s == "vit3d" || s == "vit") return ArchitectureId::ViT3D;
  if (s == "AlexNet3D" || s == "alexnet3d" || s == "alexnet") return ArchitectureId::AlexNet3D;
  return std::nullopt;
}

int64_t clinical_dim(bool include_survival) { return include_survival ? 11 : 10; }

int64_t clinical_dim(const InputSpec& spec, const ModelHyperparams& hp) {
  return spec.use_clinical ? clinical_dim(hp.include_survival) : 0;
}

std::unique_ptr<nn::Network> build_model(ArchitectureId arch, const InputSpec& spec,
                                         uint64_t init_seed, const ModelHyperparams& hp,
                                         int n_classes) {
  const int64_t ch = spec.channel_count();
  if (ch <= 0) throw Error("build_model: input spec selects no channels");
  const int64_t clin = clinical_dim(spec, hp);

  std::unique_ptr<nn::Network> net;
  switch (arch) {
    case ArchitectureId::Densenet121:
      net = std::make_unique<nn::DenseNet3d>(ch, clin, n_classes, std::array<int, 4>{6, 12, 24, 16});
      break;
    case ArchitectureId::Densenet169:
      net = std::make_unique<nn::DenseNet3d>(ch, clin, n_classes, std::array<int, 4>{6, 12, 32, 32});
      break;
    case ArchitectureId::Densenet264:
      net = std::make_unique<nn::DenseNet3d>(ch, clin, n_classes, std::array<int, 4>{6, 12, 64, 48});
      break;
    case ArchitectureId::ViT3D: {
      nn::VitConfig cfg;
      cfg.input_dhw = hp.input_dhw;
      cfg.patch = hp.vit_patch;
      cfg.dim = hp.vit_dim;
      cfg.depth = hp.vit_depth;
      cfg.heads = hp.vit_heads;
      cfg.mlp_ratio = hp.vit_mlp_ratio;
      net = std::make_unique<nn::ViT3d>(ch, clin, n_classes, cfg);
      break;
    }
    case ArchitectureId::AlexNet3D:
      net = std::make_unique<nn::AlexNet3d>(ch, clin, n_classes, hp.alexnet_dropout);
      break;
  }
  net->init_weights(init_seed);
  return net;
}

ModelOutput model_output(const nn::Tensor& logits, int64_t row) {
  if (logits.ndim() != 2) throw Error("model_output: expected (N, classes) logits");
  const int64_t k = logits.dim(1);
  ModelOutput out;
  double mx = -1e300;
  for (int64_t c = 0; c < k && c < kNumClasses; ++c) {
    out.logits[static_cast<size_t>(c)] = logits.at2(row, c);
    mx = std::max(mx, out.logits[static_cast<size_t>(c)]);
  }
  double z = 0;
  for (int64_t c = 0; c < k && c < kNumClasses; ++c) {
    out.probabilities[static_cast<size_t>(c)] = std::exp(out.logits[static_cast<size_t>(c)] - mx);
    z += out.probabilities[static_cast<size_t>(c)];
  }
  for (auto& p : out.probabilities) p /= z;
  out.predicted = static_cast<int>(std::max_element(out.probabilities.begin(), out.probabilities.end()) -
                                   out.probabilities.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Clinical
// ---------------------------------------------------------------------------

ClinicalStats fit_clinical_stats(const std::vector<ClinicalVector>& train_patients,
                                 bool include_survival) {
  if (train_patients.empty()) throw Error("fit_clinical_stats: no training patients");
  ClinicalStats s;
  s.include_survival = include_survival;
  double sum = 0, sum2 = 0;
  for (const auto& cv : train_patients) {
    sum += cv.age_at_surgery;
    sum2 += cv.age_at_surgery * cv.age_at_surgery;
  }
  const double n = static_cast<double>(train_patients.size());
  s.age_mean = sum / n;
  s.age_std = std::sqrt(std::max(1e-12, sum2 / n - s.age_mean * s.age_mean));
  if (s.age_std < 1e-6) s.age_std = 1.0;
  if (include_survival) {
    double ss = 0, ss2 = 0;
    int64_t cnt = 0;
    for (const auto& cv : train_patients) {
      if (cv.survival_weeks) {
        ss += *cv.survival_weeks;
        ss2 += *cv.survival_weeks * *cv.survival_weeks;
        ++cnt;
      }
    }
    if (cnt > 0) {
      s.survival_mean = ss / static_cast<double>(cnt);
      s.survival_std =
          std::sqrt(std::max(1e-12, ss2 / static_cast<double>(cnt) - s.survival_mean * s.survival_mean));
      if (s.survival_std < 1e-6) s.survival_std = 1.0;
    }
  }
  return s;
}

std::vector<float> encode_clinical(const ClinicalVector& cv, const ClinicalStats& stats) {
  std::vector<float> v;
  v.reserve(static_cast<size_t>(clinical_dim(stats.include_survival)));
  v.push_back(static_cast<float>((cv.age_at_surgery - stats.age_mean) / stats.age_std));
  v.push_back(cv.sex == Sex::M ? 1.f : 0.f);
  v.push_back(cv.sex == Sex::F ? 1.f : 0.f);
  v.push_back(cv.idh == IdhStatus::wildtype ? 1.f : 0.f);
  v.push_back(cv.idh == IdhStatus::IDH1_negative ? 1.f : 0.f);
  v.push_back(cv.idh == IdhStatus::mutant ? 1.f : 0.f);
  v.push_back(cv.idh == IdhStatus::missing ? 1.f : 0.f);
  v.push_back(cv.mgmt == MgmtStatus::methylated ? 1.f : 0.f);
  v.push_back(cv.mgmt == MgmtStatus::unmethylated ? 1.f : 0.f);
  v.push_back(cv.mgmt == MgmtStatus::missing ? 1.f : 0.f);
  if (stats.include_survival) {
    const double sv = cv.survival_weeks ? *cv.survival_weeks : stats.survival_mean;
    v.push_back(static_cast<float>((sv - stats.survival_mean) / stats.survival_std));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

AssembledInput assemble_input(const StudySample& sample, const InputSpec& spec,
                              const VolumeLookup& lookup, const ClinicalVector* clinical,
                              const ClinicalStats* stats) {
  AssembledInput out;
  for (Modality m : spec.modalities.list()) {
    const auto pit = sample.prev.image_paths.find(m);
    const auto cit = sample.curr.image_paths.find(m);
    if (pit == sample.prev.image_paths.end() || cit == sample.curr.image_paths.end()) {
      throw Error("assemble_input: sample " + sample.id() + " lacks a preprocessed " +
                  to_string(m) + " volume (cache corruption?)");
    }
    VolumeGrid prev = lookup(pit->second);
    VolumeGrid curr = lookup(cit->second);
    if (prev.dims != curr.dims) {
      throw Error("assemble_input: timepoint shapes disagree for " + sample.id());
    }
    if (spec.use_subtraction) {
      out.channels.push_back(prep::subtract(curr, prev));
    } else {
      out.channels.push_back(std::move(prev));
      out.channels.push_back(std::move(curr));
    }
  }
  if (!out.channels.empty()) {
    for (const auto& c : out.channels) {
      if (c.dims != out.channels[0].dims) {
        throw Error("assemble_input: channel shapes disagree for " + sample.id());
      }
    }
  }
  if (spec.use_clinical) {
    if (!clinical || !stats) {
      throw Error("assemble_input: sample " + sample.id() +
                  " needs a clinical vector but none was provided");
    }
    out.clinical = encode_clinical(*clinical, *stats);
  }
  return out;
}

nn::Tensor channels_to_tensor(const std::vector<VolumeGrid>& channels) {
  if (channels.empty()) throw Error("channels_to_tensor: no channels");
  const auto d = channels[0].dims;
  nn::Tensor t = nn::Tensor::zeros({static_cast<int64_t>(channels.size()), d[0], d[1], d[2]});
  const int64_t vox = d[0] * d[1] * d[2];
  for (size_t c = 0; c < channels.size(); ++c) {
    std::copy(channels[c].voxels.begin(), channels[c].voxels.end(),
              t.ptr() + static_cast<int64_t>(c) * vox);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[] = "RANOCKPT1\n";

json meta_to_json(const CheckpointMeta& meta) {
  return json{{"arch", to_string(meta.arch)},
              {"modalities", meta.spec.modalities.str()},
              {"use_subtraction", meta.spec.use_subtraction},
              {"use_clinical", meta.spec.use_clinical},
              {"init_seed", meta.init_seed},
              {"config_hash", meta.config_hash},
              {"fold", meta.fold},
              {"n_classes", meta.n_classes}};
}

CheckpointMeta meta_from_json(const json& j) {
  for (const char* field : {"arch", "modalities", "use_subtraction", "use_clinical", "init_seed",
                            "config_hash", "fold", "n_classes"}) {
    if (!j.contains(field)) throw Error(std::string("checkpoint missing required field: ") + field);
  }
  CheckpointMeta meta;
  const auto arch = parse_architecture(j.at("arch").get<std::string>());
  if (!arch) throw Error("checkpoint names unknown architecture " + j.at("arch").dump());
  meta.arch = *arch;
  const auto mods = ModalitySet::parse(j.at("modalities").get<std::string>());
  if (!mods) throw Error("checkpoint has bad modality set");
  meta.spec.modalities = *mods;
  meta.spec.use_subtraction = j.at("use_subtraction").get<bool>();
  meta.spec.use_clinical = j.at("use_clinical").get<bool>();
  meta.init_seed = j.at("init_seed").get<uint64_t>();
  meta.config_hash = j.at("config_hash").get<std::string>();
  meta.fold = j.at("fold").get<int>();
  meta.n_classes = j.at("n_classes").get<int>();
  return meta;
}

struct RawCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, nn::Tensor>> tensors;
};

RawCheckpoint read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error("not a checkpoint file: " + path.string());
  }
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error("truncated checkpoint header: " + path.string());
  json j = json::parse(header);

  RawCheckpoint raw;
  raw.meta = meta_from_json(j);
  for (const auto& t : j.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<int64_t>>();
    nn::Tensor tensor = nn::Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(tensor.ptr()),
            static_cast<std::streamsize>(tensor.numel() * 4));
    if (!in) throw Error("truncated checkpoint data: " + path.string());
    raw.tensors.emplace_back(name, std::move(tensor));
  }
  return raw;
}

}  // namespace

void save_checkpoint(nn::Network& net, const CheckpointMeta& meta, const fs::path& path) {
  json j = meta_to_json(meta);
  json tensors = json::array();
  for (nn::Parameter* p : net.parameters()) {
    tensors.push_back(json{{"name", p->name}, {"shape", p->value.shape}});
  }
  j["tensors"] = tensors;
  const std::string header = j.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic) - 1);
  const uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (nn::Parameter* p : net.parameters()) {
    out.write(reinterpret_cast<const char*>(p->value.ptr()),
              static_cast<std::streamsize>(p->value.numel() * 4));
  }
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) { return read_raw(path).meta; }

CheckpointMeta load_checkpoint(nn::Network& net, const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  auto params = net.parameters();
  if (params.size() != raw.tensors.size()) {
    throw Error("checkpoint tensor count mismatch (" + std::to_string(raw.tensors.size()) +
                " stored, " + std::to_string(params.size()) + " expected): " + path.string());
  }
  std::map<std::string, nn::Tensor*> by_name;
  for (auto& [name, tensor] : raw.tensors) by_name[name] = &tensor;
  for (nn::Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw Error("checkpoint lacks tensor " + p->name);
    if (it->second->shape != p->value.shape) throw Error("checkpoint shape mismatch for " + p->name);
    p->value = std::move(*it->second);
  }
  return raw.meta;
}

double load_backbone_weights(nn::Network& net, const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  std::map<std::string, nn::Tensor*> by_name;
  for (auto& [name, tensor] : raw.tensors) by_name[name] = &tensor;

  int64_t backbone = 0, matched = 0;
  for (nn::Parameter* p : net.parameters()) {
    if (p->name.rfind("head.", 0) == 0) continue;
    ++backbone;
    auto it = by_name.find(p->name);
    if (it != by_name.end() && it->second->shape == p->value.shape) {
      p->value = *it->second;
      ++matched;
    }
  }
  const double fraction =
      backbone > 0 ? static_cast<double>(matched) / static_cast<double>(backbone) : 0.0;
  log::info("load_backbone_weights: matched " + std::to_string(matched) + "/" +
            std::to_string(backbone) + " backbone tensors (" + std::to_string(fraction) + ")");
  if (fraction < 0.5) {
    throw Error("checkpoint matches only " + std::to_string(fraction * 100.0) +
                "% of backbone tensors; silent partial loads are forbidden");
  }
  return fraction;
}

}  // namespace rano::models
