#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rano/nn/layers.hpp"

namespace rano::nn {

/// A classifier over (N, C, D, H, W) volumes with an optional clinical vector
/// fused into the penultimate feature vector. Concrete architectures supply
/// the backbone; the head (and its clinical concatenation) is shared.
///
/// Explainability hooks: architectures publish named spatial feature taps
/// whose values are cached by forward() and whose gradients are cached by
/// backward().
class Network {
 public:
  Network(int64_t in_channels, int64_t clinical_dim, int n_classes)
      : in_channels_(in_channels), clinical_dim_(clinical_dim), n_classes_(n_classes) {}
  virtual ~Network() = default;

  /// x: (N, in_channels, D, H, W); clinical: (N, clinical_dim) when the
  /// network was built with one. Returns logits (N, n_classes).
  Tensor forward(const Tensor& x, const Tensor* clinical, bool train);

  /// grad_logits: (N, n_classes). Accumulates parameter gradients and returns
  /// the gradient with respect to the input volume.
  Tensor backward(const Tensor& grad_logits);

  std::vector<Parameter*> parameters();            // includes buffers
  std::vector<Parameter*> trainable_parameters();  // optimizer view
  void zero_grad();
  int64_t parameter_count();  // trainable scalars

  /// Deterministic Xavier-normal initialization of every weight.
  void init_weights(uint64_t seed);
  /// Replaces the classification head (used after pretraining).
  void reset_head(int n_classes, uint64_t seed);

  virtual std::vector<std::string> feature_taps() const = 0;
  virtual std::string default_cam_tap() const = 0;
  const Tensor& tap_value(const std::string& name) const;
  const Tensor& tap_grad(const std::string& name) const;

  int64_t in_channels() const { return in_channels_; }
  int64_t clinical_dim() const { return clinical_dim_; }
  int n_classes() const { return n_classes_; }
  /// Gradient wrt the clinical input from the most recent backward().
  const Tensor& clinical_grad() const { return clinical_grad_; }

 protected:
  virtual Tensor backbone_forward(const Tensor& x, bool train) = 0;  // -> (N, feature_dim)
  virtual Tensor backbone_backward(const Tensor& grad_features) = 0;  // -> input grad
  virtual int64_t feature_dim() const = 0;
  virtual void collect_backbone_state(std::vector<Parameter*>& out) = 0;
  virtual void init_backbone(std::mt19937_64& rng) = 0;

  void ensure_head();

  std::map<std::string, Tensor> tap_values_;
  std::map<std::string, Tensor> tap_grads_;
  std::mt19937_64 dropout_rng_{0x9d2c5680};

 private:
  int64_t in_channels_;
  int64_t clinical_dim_;
  int n_classes_;
  std::unique_ptr<Linear> head_;
  Tensor clinical_grad_;
};

// (N, A, D, H, W) ++ (N, B, D, H, W) -> (N, A+B, D, H, W)
Tensor concat_channels(const Tensor& a, const Tensor& b);
// inverse split of the gradient
void split_channels(const Tensor& g, int64_t a_channels, Tensor& ga, Tensor& gb);

}  // namespace rano::nn
