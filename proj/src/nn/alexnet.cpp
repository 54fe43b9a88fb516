#include "rano/nn/architectures.hpp"

namespace rano::nn {

AlexNet3d::AlexNet3d(int64_t in_channels, int64_t clinical_dim, int n_classes, double dropout)
    : Network(in_channels, clinical_dim, n_classes) {
  features_.add(std::make_unique<Conv3d>("conv1", in_channels, 64, 7, 2, 3));
  features_.add(std::make_unique<ReLU>());
  features_.add(std::make_unique<MaxPool3d>(3, 2, 1));
  features_.add(std::make_unique<Conv3d>("conv2", 64, 192, 5, 1, 2));
  features_.add(std::make_unique<ReLU>());
  features_.add(std::make_unique<MaxPool3d>(3, 2, 1));
  features_.add(std::make_unique<Conv3d>("conv3", 192, 384, 3, 1, 1));
  features_.add(std::make_unique<ReLU>());
  features_.add(std::make_unique<Conv3d>("conv4", 384, 256, 3, 1, 1));
  features_.add(std::make_unique<ReLU>());
  features_.add(std::make_unique<Conv3d>("conv5", 256, 256, 3, 1, 1));
  features_.add(std::make_unique<ReLU>());
  features_.add(std::make_unique<MaxPool3d>(3, 2, 1));

  classifier_.add(std::make_unique<Dropout>(dropout, &dropout_rng_));
  classifier_.add(std::make_unique<Linear>("fc1", 256, 1024));
  classifier_.add(std::make_unique<ReLU>());
  classifier_.add(std::make_unique<Dropout>(dropout, &dropout_rng_));
  classifier_.add(std::make_unique<Linear>("fc2", 1024, 1024));
  classifier_.add(std::make_unique<ReLU>());
}

Tensor AlexNet3d::backbone_forward(const Tensor& x, bool train) {
  Tensor maps = features_.forward(x, train);
  tap_values_["conv5"] = maps;
  Tensor pooled = gap_.forward(maps, train);
  return classifier_.forward(pooled, train);
}

Tensor AlexNet3d::backbone_backward(const Tensor& grad_features) {
  Tensor gpool = classifier_.backward(grad_features);
  Tensor gmaps = gap_.backward(gpool);
  tap_grads_["conv5"] = gmaps;
  return features_.backward(gmaps);
}

void AlexNet3d::collect_backbone_state(std::vector<Parameter*>& out) {
  features_.collect_state(out);
  classifier_.collect_state(out);
}

void AlexNet3d::init_backbone(std::mt19937_64& rng) {
  features_.init(rng);
  classifier_.init(rng);
}

}  // namespace rano::nn
