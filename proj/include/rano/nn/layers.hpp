#pragma once

#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rano/nn/tensor.hpp"

namespace rano::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;  // false for running statistics

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.f); }
};

/// Caffe-style layer: forward caches whatever backward needs; backward
/// accumulates parameter gradients and returns the input gradient. Backward
/// must follow the matching forward.
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_state(std::vector<Parameter*>& out) {}
  /// Xavier-normal weight init (biases zero, norm scales one).
  virtual void init(std::mt19937_64& rng) {}
};

/// Xavier-normal fill: std = sqrt(2 / (fan_in + fan_out)).
void xavier_normal(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng);

class Conv3d : public Module {
 public:
  Conv3d(std::string name, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
         int64_t padding, bool bias = true);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

  static std::array<int64_t, 3> out_dims(const std::array<int64_t, 3>& in, int64_t kernel,
                                         int64_t stride, int64_t padding);

  Parameter weight;  // (out_ch, in_ch, k, k, k)
  Parameter bias;    // (out_ch) when enabled

 private:
  int64_t in_ch_, out_ch_, k_, stride_, pad_;
  bool has_bias_;
  Tensor input_;  // cached for backward
};

class BatchNorm3d : public Module {
 public:
  BatchNorm3d(std::string name, int64_t channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

  Parameter gamma, beta;
  Parameter running_mean, running_var;  // buffers

 private:
  int64_t channels_;
  double eps_, momentum_;
  bool trained_forward_ = false;
  Tensor xhat_;                    // cached normalized activations
  std::vector<double> inv_std_;    // per channel
  std::vector<double> eval_scale_; // gamma/sqrt(running_var+eps) for eval backward
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<uint8_t> mask_;
};

class GELU : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class MaxPool3d : public Module {
 public:
  MaxPool3d(int64_t kernel, int64_t stride, int64_t padding);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int64_t k_, stride_, pad_;
  std::vector<int64_t> argmax_;
  std::vector<int64_t> in_shape_;
};

/// Average pooling with clipped windows; output extents clamp to >= 1 so very
/// small desk-scale volumes stay valid through deep pooling chains.
class AvgPool3d : public Module {
 public:
  AvgPool3d(int64_t kernel, int64_t stride);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int64_t k_, stride_;
  std::vector<int64_t> in_shape_;
};

/// (N,C,D,H,W) -> (N,C) spatial mean.
class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<int64_t> in_shape_;
};

class Linear : public Module {
 public:
  Linear(std::string name, int64_t in, int64_t out, bool bias = true);
  Tensor forward(const Tensor& x, bool train) override;  // x: (N, in)
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

  Parameter weight;  // (out, in)
  Parameter bias;
  int64_t in_features() const { return in_; }
  int64_t out_features() const { return out_; }

 private:
  int64_t in_, out_;
  bool has_bias_;
  Tensor input_;
};

class Dropout : public Module {
 public:
  Dropout(double p, std::mt19937_64* rng) : p_(p), rng_(rng) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double p_;
  std::mt19937_64* rng_;
  std::vector<float> scale_;
};

/// Normalizes the last dimension; input (..., E).
class LayerNorm : public Module {
 public:
  LayerNorm(std::string name, int64_t dim, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

  Parameter gamma, beta;

 private:
  int64_t dim_;
  double eps_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class Sequential : public Module {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Module> m) { mods_.push_back(std::move(m)); }
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;
  Module* at(size_t i) { return mods_[i].get(); }
  size_t size() const { return mods_.size(); }

 private:
  std::vector<std::unique_ptr<Module>> mods_;
};

// --- small dense-matrix helpers shared by layers (Eigen-backed) ---

// C(m,n) += or = A(m,k) * B(k,n), all row-major contiguous
void gemm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
          bool accumulate);
// C(m,n) = A(k,m)^T * B(k,n)
void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
             bool accumulate);
// C(m,n) = A(m,k) * B(n,k)^T
void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
             bool accumulate);

}  // namespace rano::nn
