#pragma once

#include <array>

#include "rano/nn/network.hpp"

namespace rano::nn {

// ---------------------------------------------------------------------------
// 3D DenseNet (growth 32, stem width 64, bottleneck 4x)
//   121: blocks (6, 12, 24, 16)
//   169: blocks (6, 12, 32, 32)
//   264: blocks (6, 12, 64, 48)
// Stem: conv 7^3 /2 -> BN -> ReLU -> maxpool 3^3 /2. Dense layers are
// BN-ReLU-conv1 -> BN-ReLU-conv3 with channel concatenation; transitions
// halve channels and pool by 2. Feature tap "features" is the output of the
// final BN-ReLU, before global average pooling.
// ---------------------------------------------------------------------------

class DenseLayer3d : public Module {
 public:
  DenseLayer3d(const std::string& name, int64_t in_ch, int64_t growth, int64_t bn_size);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

 private:
  int64_t in_ch_;
  Sequential inner_;
};

class DenseNet3d : public Network {
 public:
  DenseNet3d(int64_t in_channels, int64_t clinical_dim, int n_classes,
             std::array<int, 4> block_layers);

  std::vector<std::string> feature_taps() const override { return {"features"}; }
  std::string default_cam_tap() const override { return "features"; }

 protected:
  Tensor backbone_forward(const Tensor& x, bool train) override;
  Tensor backbone_backward(const Tensor& grad_features) override;
  int64_t feature_dim() const override { return feature_dim_; }
  void collect_backbone_state(std::vector<Parameter*>& out) override;
  void init_backbone(std::mt19937_64& rng) override;

 private:
  Sequential trunk_;  // stem .. final BN-ReLU
  GlobalAvgPool gap_;
  int64_t feature_dim_ = 0;
};

// ---------------------------------------------------------------------------
// 3D ViT: non-overlapping cubic patch embedding, learned class token and
// positional embeddings, pre-norm transformer blocks. The patch size must
// divide the (fixed) input grid. Feature tap "tokens" is the final block's
// patch-token grid reshaped to (N, E, D/p, H/p, W/p).
// ---------------------------------------------------------------------------

struct VitConfig {
  std::array<int64_t, 3> input_dhw{16, 16, 16};
  int64_t patch = 8;
  int64_t dim = 96;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 2.0;
};

class ViT3d : public Network {
 public:
  ViT3d(int64_t in_channels, int64_t clinical_dim, int n_classes, const VitConfig& cfg);
  ~ViT3d() override;

  std::vector<std::string> feature_taps() const override { return {"tokens"}; }
  std::string default_cam_tap() const override { return "tokens"; }

 protected:
  Tensor backbone_forward(const Tensor& x, bool train) override;
  Tensor backbone_backward(const Tensor& grad_features) override;
  int64_t feature_dim() const override { return cfg_.dim; }
  void collect_backbone_state(std::vector<Parameter*>& out) override;
  void init_backbone(std::mt19937_64& rng) override;

 private:
  struct Block;
  VitConfig cfg_;
  std::array<int64_t, 3> grid_;
  int64_t tokens_ = 0;  // patch tokens (excl. cls)
  std::unique_ptr<Conv3d> patch_embed_;
  Parameter cls_token_;  // (1, dim)
  Parameter pos_embed_;  // (tokens_+1, dim)
  std::vector<std::unique_ptr<Block>> blocks_;
  std::unique_ptr<LayerNorm> final_norm_;
  Tensor final_tokens_;  // cached (N, T+1, E) entering final_norm_
};

// ---------------------------------------------------------------------------
// AlexNet3d: the canonical five-conv AlexNet stack with every 2D operator
// replaced by its 3D analogue, scaled for volumetric inputs:
//   conv1 64ch  7^3 /2 p3 - ReLU - maxpool 3^3 /2 p1
//   conv2 192ch 5^3 /1 p2 - ReLU - maxpool 3^3 /2 p1
//   conv3 384ch 3^3 p1 - ReLU
//   conv4 256ch 3^3 p1 - ReLU
//   conv5 256ch 3^3 p1 - ReLU - maxpool 3^3 /2 p1
// then global average pooling and the two 1024-unit dropout/ReLU
// fully-connected stages; the classification head is resized to n_classes.
// Feature tap "conv5" is the last conv stage's ReLU output.
// ---------------------------------------------------------------------------

class AlexNet3d : public Network {
 public:
  AlexNet3d(int64_t in_channels, int64_t clinical_dim, int n_classes, double dropout = 0.5);

  std::vector<std::string> feature_taps() const override { return {"conv5"}; }
  std::string default_cam_tap() const override { return "conv5"; }

 protected:
  Tensor backbone_forward(const Tensor& x, bool train) override;
  Tensor backbone_backward(const Tensor& grad_features) override;
  int64_t feature_dim() const override { return 1024; }
  void collect_backbone_state(std::vector<Parameter*>& out) override;
  void init_backbone(std::mt19937_64& rng) override;

 private:
  Sequential features_;
  GlobalAvgPool gap_;
  Sequential classifier_;  // dropout-fc1-relu-dropout-fc2-relu
};

}  // namespace rano::nn
