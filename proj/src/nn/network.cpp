#include "rano/nn/network.hpp"

namespace rano::nn {

void Network::ensure_head() {
  if (!head_) {
    head_ = std::make_unique<Linear>("head", feature_dim() + clinical_dim_, n_classes_);
  }
}

Tensor Network::forward(const Tensor& x, const Tensor* clinical, bool train) {
  if (x.ndim() != 5 || x.dim(1) != in_channels_) {
    throw Error("network: expected (N," + std::to_string(in_channels_) + ",D,H,W) input");
  }
  ensure_head();
  Tensor feat = backbone_forward(x, train);
  if (clinical_dim_ > 0) {
    if (!clinical || clinical->ndim() != 2 || clinical->dim(1) != clinical_dim_ ||
        clinical->dim(0) != x.dim(0)) {
      throw Error("network: clinical vector of length " + std::to_string(clinical_dim_) +
                  " required for every sample");
    }
    const int64_t n = feat.dim(0), f = feat.dim(1), k = clinical_dim_;
    Tensor fused = Tensor::zeros({n, f + k});
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < f; ++j) fused.at2(i, j) = feat.at2(i, j);
      for (int64_t j = 0; j < k; ++j) fused.at2(i, f + j) = clinical->at2(i, j);
    }
    return head_->forward(fused, train);
  }
  return head_->forward(feat, train);
}

Tensor Network::backward(const Tensor& grad_logits) {
  Tensor gfused = head_->backward(grad_logits);
  if (clinical_dim_ > 0) {
    const int64_t n = gfused.dim(0);
    const int64_t f = feature_dim();
    Tensor gfeat = Tensor::zeros({n, f});
    clinical_grad_ = Tensor::zeros({n, clinical_dim_});
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < f; ++j) gfeat.at2(i, j) = gfused.at2(i, j);
      for (int64_t j = 0; j < clinical_dim_; ++j) clinical_grad_.at2(i, j) = gfused.at2(i, f + j);
    }
    return backbone_backward(gfeat);
  }
  return backbone_backward(gfused);
}

std::vector<Parameter*> Network::parameters() {
  ensure_head();
  std::vector<Parameter*> out;
  collect_backbone_state(out);
  head_->collect_state(out);
  return out;
}

std::vector<Parameter*> Network::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->requires_grad) out.push_back(p);
  }
  return out;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

int64_t Network::parameter_count() {
  int64_t n = 0;
  for (Parameter* p : trainable_parameters()) n += p->value.numel();
  return n;
}

void Network::init_weights(uint64_t seed) {
  ensure_head();
  std::mt19937_64 rng(mix64(seed));
  init_backbone(rng);
  head_->init(rng);
  dropout_rng_.seed(derive_seed(seed, "dropout"));
  zero_grad();
}

void Network::reset_head(int n_classes, uint64_t seed) {
  n_classes_ = n_classes;
  head_ = std::make_unique<Linear>("head", feature_dim() + clinical_dim_, n_classes);
  std::mt19937_64 rng(derive_seed(seed, "head-reset"));
  head_->init(rng);
}

const Tensor& Network::tap_value(const std::string& name) const {
  auto it = tap_values_.find(name);
  if (it == tap_values_.end()) {
    std::string valid;
    for (const auto& t : feature_taps()) valid += (valid.empty() ? "" : ", ") + t;
    throw Error("unknown feature tap '" + name + "'; valid taps: " + valid);
  }
  return it->second;
}

const Tensor& Network::tap_grad(const std::string& name) const {
  auto it = tap_grads_.find(name);
  if (it == tap_grads_.end()) {
    std::string valid;
    for (const auto& t : feature_taps()) valid += (valid.empty() ? "" : ", ") + t;
    throw Error("no gradient cached for tap '" + name + "'; valid taps: " + valid);
  }
  return it->second;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const int64_t vox = a.dim(2) * a.dim(3) * a.dim(4);
  Tensor out = Tensor::zeros({n, ca + cb, a.dim(2), a.dim(3), a.dim(4)});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(a.ptr() + i * ca * vox, a.ptr() + (i + 1) * ca * vox,
              out.ptr() + i * (ca + cb) * vox);
    std::copy(b.ptr() + i * cb * vox, b.ptr() + (i + 1) * cb * vox,
              out.ptr() + (i * (ca + cb) + ca) * vox);
  }
  return out;
}

void split_channels(const Tensor& g, int64_t a_channels, Tensor& ga, Tensor& gb) {
  const int64_t n = g.dim(0), c = g.dim(1);
  const int64_t cb = c - a_channels;
  const int64_t vox = g.dim(2) * g.dim(3) * g.dim(4);
  ga = Tensor::zeros({n, a_channels, g.dim(2), g.dim(3), g.dim(4)});
  gb = Tensor::zeros({n, cb, g.dim(2), g.dim(3), g.dim(4)});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(g.ptr() + i * c * vox, g.ptr() + (i * c + a_channels) * vox,
              ga.ptr() + i * a_channels * vox);
    std::copy(g.ptr() + (i * c + a_channels) * vox, g.ptr() + (i + 1) * c * vox,
              gb.ptr() + i * cb * vox);
  }
}

}  // namespace rano::nn
