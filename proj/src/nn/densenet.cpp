#include "rano/nn/architectures.hpp"

namespace rano::nn {

namespace {
constexpr int64_t kGrowth = 32;
constexpr int64_t kStemWidth = 64;
constexpr int64_t kBnSize = 4;
}  // namespace

DenseLayer3d::DenseLayer3d(const std::string& name, int64_t in_ch, int64_t growth,
                           int64_t bn_size)
    : in_ch_(in_ch) {
  inner_.add(std::make_unique<BatchNorm3d>(name + ".bn1", in_ch));
  inner_.add(std::make_unique<ReLU>());
  inner_.add(std::make_unique<Conv3d>(name + ".conv1", in_ch, bn_size * growth, 1, 1, 0, false));
  inner_.add(std::make_unique<BatchNorm3d>(name + ".bn2", bn_size * growth));
  inner_.add(std::make_unique<ReLU>());
  inner_.add(std::make_unique<Conv3d>(name + ".conv2", bn_size * growth, growth, 3, 1, 1, false));
}

Tensor DenseLayer3d::forward(const Tensor& x, bool train) {
  Tensor grown = inner_.forward(x, train);
  return concat_channels(x, grown);
}

Tensor DenseLayer3d::backward(const Tensor& grad_out) {
  Tensor gx, ggrown;
  split_channels(grad_out, in_ch_, gx, ggrown);
  Tensor gx2 = inner_.backward(ggrown);
  for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gx2.data[i];
  return gx;
}

void DenseLayer3d::collect_state(std::vector<Parameter*>& out) { inner_.collect_state(out); }
void DenseLayer3d::init(std::mt19937_64& rng) { inner_.init(rng); }

DenseNet3d::DenseNet3d(int64_t in_channels, int64_t clinical_dim, int n_classes,
                       std::array<int, 4> block_layers)
    : Network(in_channels, clinical_dim, n_classes) {
  trunk_.add(std::make_unique<Conv3d>("stem.conv", in_channels, kStemWidth, 7, 2, 3, false));
  trunk_.add(std::make_unique<BatchNorm3d>("stem.bn", kStemWidth));
  trunk_.add(std::make_unique<ReLU>());
  trunk_.add(std::make_unique<MaxPool3d>(3, 2, 1));

  int64_t ch = kStemWidth;
  for (int b = 0; b < 4; ++b) {
    for (int l = 0; l < block_layers[static_cast<size_t>(b)]; ++l) {
      const std::string name =
          "block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1);
      trunk_.add(std::make_unique<DenseLayer3d>(name, ch, kGrowth, kBnSize));
      ch += kGrowth;
    }
    if (b < 3) {
      const std::string name = "transition" + std::to_string(b + 1);
      trunk_.add(std::make_unique<BatchNorm3d>(name + ".bn", ch));
      trunk_.add(std::make_unique<ReLU>());
      const int64_t out_ch = ch / 2;
      trunk_.add(std::make_unique<Conv3d>(name + ".conv", ch, out_ch, 1, 1, 0, false));
      trunk_.add(std::make_unique<AvgPool3d>(2, 2));
      ch = out_ch;
    }
  }
  trunk_.add(std::make_unique<BatchNorm3d>("final.bn", ch));
  trunk_.add(std::make_unique<ReLU>());
  feature_dim_ = ch;
}

Tensor DenseNet3d::backbone_forward(const Tensor& x, bool train) {
  Tensor features = trunk_.forward(x, train);
  tap_values_["features"] = features;
  return gap_.forward(features, train);
}

Tensor DenseNet3d::backbone_backward(const Tensor& grad_features) {
  Tensor g = gap_.backward(grad_features);
  tap_grads_["features"] = g;
  return trunk_.backward(g);
}

void DenseNet3d::collect_backbone_state(std::vector<Parameter*>& out) {
  trunk_.collect_state(out);
}

void DenseNet3d::init_backbone(std::mt19937_64& rng) { trunk_.init(rng); }

}  // namespace rano::nn
