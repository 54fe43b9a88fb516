#include "rano/nn/layers.hpp"

#include <Eigen/Core>

#include <cmath>

namespace rano::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void gemm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
          bool accumulate) {
  CMapMat A(a, m, k), B(b, k, n);
  MapMat C(c, m, n);
  if (accumulate) C.noalias() += A * B;
  else C.noalias() = A * B;
}

void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
  CMapMat A(a, k, m), B(b, k, n);
  MapMat C(c, m, n);
  if (accumulate) C.noalias() += A.transpose() * B;
  else C.noalias() = A.transpose() * B;
}

void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
  CMapMat A(a, m, k), B(b, n, k);
  MapMat C(c, m, n);
  if (accumulate) C.noalias() += A * B.transpose();
  else C.noalias() = A * B.transpose();
}

void xavier_normal(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : t.data) x = static_cast<float>(stddev * normal01(rng));
}

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

Conv3d::Conv3d(std::string name, int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride,
               int64_t padding, bool bias)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(padding), has_bias_(bias) {
  weight.name = name + ".weight";
  weight.value = Tensor::zeros({out_ch, in_ch, k_, k_, k_});
  weight.grad = Tensor::zeros(weight.value.shape);
  if (has_bias_) {
    this->bias.name = name + ".bias";
    this->bias.value = Tensor::zeros({out_ch});
    this->bias.grad = Tensor::zeros({out_ch});
  }
}

std::array<int64_t, 3> Conv3d::out_dims(const std::array<int64_t, 3>& in, int64_t kernel,
                                        int64_t stride, int64_t padding) {
  std::array<int64_t, 3> out;
  for (int a = 0; a < 3; ++a) {
    out[a] = (in[a] + 2 * padding - kernel) / stride + 1;
    if (out[a] < 1) throw Error("conv3d: spatial extent collapsed below 1");
  }
  return out;
}

namespace {

// col is (Cin*k^3) x (oD*oH*oW), row-major
void im2col(const float* x, int64_t cin, const std::array<int64_t, 3>& in,
            const std::array<int64_t, 3>& out, int64_t k, int64_t stride, int64_t pad,
            float* col) {
  const int64_t ovox = out[0] * out[1] * out[2];
  const int64_t in_hw = in[1] * in[2];
  for (int64_t c = 0; c < cin; ++c) {
    const float* xc = x + c * in[0] * in_hw;
    for (int64_t kd = 0; kd < k; ++kd) {
      for (int64_t kh = 0; kh < k; ++kh) {
        for (int64_t kw = 0; kw < k; ++kw) {
          float* row = col + (((c * k + kd) * k + kh) * k + kw) * ovox;
          int64_t o = 0;
          for (int64_t od = 0; od < out[0]; ++od) {
            const int64_t d = od * stride - pad + kd;
            const bool dok = d >= 0 && d < in[0];
            for (int64_t oh = 0; oh < out[1]; ++oh) {
              const int64_t h = oh * stride - pad + kh;
              const bool hok = h >= 0 && h < in[1];
              for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
                const int64_t w = ow * stride - pad + kw;
                row[o] = (dok && hok && w >= 0 && w < in[2]) ? xc[d * in_hw + h * in[2] + w] : 0.f;
              }
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const float* col, int64_t cin, const std::array<int64_t, 3>& in,
                       const std::array<int64_t, 3>& out, int64_t k, int64_t stride, int64_t pad,
                       float* x) {
  const int64_t ovox = out[0] * out[1] * out[2];
  const int64_t in_hw = in[1] * in[2];
  for (int64_t c = 0; c < cin; ++c) {
    float* xc = x + c * in[0] * in_hw;
    for (int64_t kd = 0; kd < k; ++kd) {
      for (int64_t kh = 0; kh < k; ++kh) {
        for (int64_t kw = 0; kw < k; ++kw) {
          const float* row = col + (((c * k + kd) * k + kh) * k + kw) * ovox;
          int64_t o = 0;
          for (int64_t od = 0; od < out[0]; ++od) {
            const int64_t d = od * stride - pad + kd;
            const bool dok = d >= 0 && d < in[0];
            for (int64_t oh = 0; oh < out[1]; ++oh) {
              const int64_t h = oh * stride - pad + kh;
              const bool hok = h >= 0 && h < in[1];
              for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
                const int64_t w = ow * stride - pad + kw;
                if (dok && hok && w >= 0 && w < in[2]) xc[d * in_hw + h * in[2] + w] += row[o];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv3d::forward(const Tensor& x, bool) {
  if (x.ndim() != 5 || x.dim(1) != in_ch_) throw Error("conv3d: bad input shape");
  input_ = x;
  const int64_t n = x.dim(0);
  const std::array<int64_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto out = out_dims(in, k_, stride_, pad_);
  const int64_t ovox = out[0] * out[1] * out[2];
  const int64_t crows = in_ch_ * k_ * k_ * k_;

  Tensor y = Tensor::zeros({n, out_ch_, out[0], out[1], out[2]});
  std::vector<float> col(static_cast<size_t>(crows * ovox));
  for (int64_t i = 0; i < n; ++i) {
    im2col(x.ptr() + i * in_ch_ * in[0] * in[1] * in[2], in_ch_, in, out, k_, stride_, pad_,
           col.data());
    gemm(weight.value.ptr(), col.data(), y.ptr() + i * out_ch_ * ovox, out_ch_, crows, ovox,
         false);
    if (has_bias_) {
      float* yo = y.ptr() + i * out_ch_ * ovox;
      for (int64_t c = 0; c < out_ch_; ++c) {
        const float b = bias.value.data[static_cast<size_t>(c)];
        for (int64_t v = 0; v < ovox; ++v) yo[c * ovox + v] += b;
      }
    }
  }
  return y;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int64_t n = x.dim(0);
  const std::array<int64_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto out = out_dims(in, k_, stride_, pad_);
  const int64_t ovox = out[0] * out[1] * out[2];
  const int64_t crows = in_ch_ * k_ * k_ * k_;
  const int64_t in_vox = in[0] * in[1] * in[2];

  Tensor dx = Tensor::zeros(x.shape);
  std::vector<float> col(static_cast<size_t>(crows * ovox));
  std::vector<float> colgrad(static_cast<size_t>(crows * ovox));

  for (int64_t i = 0; i < n; ++i) {
    const float* go = grad_out.ptr() + i * out_ch_ * ovox;
    im2col(x.ptr() + i * in_ch_ * in_vox, in_ch_, in, out, k_, stride_, pad_, col.data());
    // dW += go * col^T
    gemm_nt(go, col.data(), weight.grad.ptr(), out_ch_, ovox, crows, true);
    // dcol = W^T * go ; then scatter back
    gemm_tn(weight.value.ptr(), go, colgrad.data(), crows, out_ch_, ovox, false);
    col2im_accumulate(colgrad.data(), in_ch_, in, out, k_, stride_, pad_,
                      dx.ptr() + i * in_ch_ * in_vox);
    if (has_bias_) {
      for (int64_t c = 0; c < out_ch_; ++c) {
        double acc = 0;
        for (int64_t v = 0; v < ovox; ++v) acc += go[c * ovox + v];
        bias.grad.data[static_cast<size_t>(c)] += static_cast<float>(acc);
      }
    }
  }
  return dx;
}

void Conv3d::collect_state(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

void Conv3d::init(std::mt19937_64& rng) {
  const int64_t k3 = k_ * k_ * k_;
  xavier_normal(weight.value, in_ch_ * k3, out_ch_ * k3, rng);
  if (has_bias_) std::fill(bias.value.data.begin(), bias.value.data.end(), 0.f);
}

// ---------------------------------------------------------------------------
// BatchNorm3d
// ---------------------------------------------------------------------------

BatchNorm3d::BatchNorm3d(std::string name, int64_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma.name = name + ".weight";
  gamma.value = Tensor::full({channels}, 1.f);
  gamma.grad = Tensor::zeros({channels});
  beta.name = name + ".bias";
  beta.value = Tensor::zeros({channels});
  beta.grad = Tensor::zeros({channels});
  running_mean.name = name + ".running_mean";
  running_mean.value = Tensor::zeros({channels});
  running_mean.requires_grad = false;
  running_var.name = name + ".running_var";
  running_var.value = Tensor::full({channels}, 1.f);
  running_var.requires_grad = false;
}

Tensor BatchNorm3d::forward(const Tensor& x, bool train) {
  if (x.ndim() != 5 || x.dim(1) != channels_) throw Error("batchnorm3d: bad input shape");
  const int64_t n = x.dim(0);
  const int64_t vox = x.dim(2) * x.dim(3) * x.dim(4);
  const int64_t count = n * vox;

  trained_forward_ = train;
  xhat_ = Tensor::zeros(x.shape);
  inv_std_.assign(static_cast<size_t>(channels_), 0.0);
  eval_scale_.assign(static_cast<size_t>(channels_), 0.0);
  Tensor y = Tensor::zeros(x.shape);

#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (train) {
      double s = 0, s2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        const float* xc = x.ptr() + (i * channels_ + c) * vox;
        for (int64_t v = 0; v < vox; ++v) {
          s += xc[v];
          s2 += static_cast<double>(xc[v]) * xc[v];
        }
      }
      mean = s / static_cast<double>(count);
      var = std::max(0.0, s2 / static_cast<double>(count) - mean * mean);
      // running stats track the unbiased variance
      const double unbiased = count > 1 ? var * count / static_cast<double>(count - 1) : var;
      running_mean.value.data[c] =
          static_cast<float>((1 - momentum_) * running_mean.value.data[c] + momentum_ * mean);
      running_var.value.data[c] =
          static_cast<float>((1 - momentum_) * running_var.value.data[c] + momentum_ * unbiased);
    } else {
      mean = running_mean.value.data[c];
      var = running_var.value.data[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[static_cast<size_t>(c)] = inv;
    const double g = gamma.value.data[c], b = beta.value.data[c];
    eval_scale_[static_cast<size_t>(c)] = g * inv;
    for (int64_t i = 0; i < n; ++i) {
      const float* xc = x.ptr() + (i * channels_ + c) * vox;
      float* hc = xhat_.ptr() + (i * channels_ + c) * vox;
      float* yc = y.ptr() + (i * channels_ + c) * vox;
      for (int64_t v = 0; v < vox; ++v) {
        const double h = (xc[v] - mean) * inv;
        hc[v] = static_cast<float>(h);
        yc[v] = static_cast<float>(g * h + b);
      }
    }
  }
  return y;
}

Tensor BatchNorm3d::backward(const Tensor& grad_out) {
  const int64_t n = grad_out.dim(0);
  const int64_t vox = grad_out.dim(2) * grad_out.dim(3) * grad_out.dim(4);
  const int64_t count = n * vox;
  Tensor dx = Tensor::zeros(grad_out.shape);

#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int64_t i = 0; i < n; ++i) {
      const float* gc = grad_out.ptr() + (i * channels_ + c) * vox;
      const float* hc = xhat_.ptr() + (i * channels_ + c) * vox;
      for (int64_t v = 0; v < vox; ++v) {
        sum_dy += gc[v];
        sum_dy_xhat += static_cast<double>(gc[v]) * hc[v];
      }
    }
    gamma.grad.data[c] += static_cast<float>(sum_dy_xhat);
    beta.grad.data[c] += static_cast<float>(sum_dy);

    if (trained_forward_) {
      const double g = gamma.value.data[c];
      const double inv = inv_std_[static_cast<size_t>(c)];
      const double k1 = g * inv / static_cast<double>(count);
      for (int64_t i = 0; i < n; ++i) {
        const float* gc = grad_out.ptr() + (i * channels_ + c) * vox;
        const float* hc = xhat_.ptr() + (i * channels_ + c) * vox;
        float* dc = dx.ptr() + (i * channels_ + c) * vox;
        for (int64_t v = 0; v < vox; ++v) {
          dc[v] = static_cast<float>(k1 * (count * gc[v] - sum_dy - hc[v] * sum_dy_xhat));
        }
      }
    } else {
      const double scale = eval_scale_[static_cast<size_t>(c)];
      for (int64_t i = 0; i < n; ++i) {
        const float* gc = grad_out.ptr() + (i * channels_ + c) * vox;
        float* dc = dx.ptr() + (i * channels_ + c) * vox;
        for (int64_t v = 0; v < vox; ++v) dc[v] = static_cast<float>(gc[v] * scale);
      }
    }
  }
  return dx;
}

void BatchNorm3d::collect_state(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

void BatchNorm3d::init(std::mt19937_64&) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.f);
  std::fill(beta.value.data.begin(), beta.value.data.end(), 0.f);
  std::fill(running_mean.value.data.begin(), running_mean.value.data.end(), 0.f);
  std::fill(running_var.value.data.begin(), running_var.value.data.end(), 1.f);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool) {
  Tensor y = x;
  mask_.assign(x.data.size(), 0);
  for (size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] > 0) {
      mask_[i] = 1;
    } else {
      y.data[i] = 0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (size_t i = 0; i < dx.data.size(); ++i) {
    if (!mask_[i]) dx.data[i] = 0;
  }
  return dx;
}

Tensor GELU::forward(const Tensor& x, bool) {
  input_ = x;
  Tensor y = x;
  for (auto& v : y.data) {
    v = static_cast<float>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
  }
  return y;
}

Tensor GELU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  for (size_t i = 0; i < dx.data.size(); ++i) {
    const double v = input_.data[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx.data[i] = static_cast<float>(dx.data[i] * (cdf + v * pdf));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

namespace {
int64_t pool_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return std::max<int64_t>(1, (in + 2 * pad - k) / stride + 1);
}
}  // namespace

MaxPool3d::MaxPool3d(int64_t kernel, int64_t stride, int64_t padding)
    : k_(kernel), stride_(stride), pad_(padding) {}

Tensor MaxPool3d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  const int64_t n = x.dim(0), ch = x.dim(1);
  const std::array<int64_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<int64_t, 3> out{pool_out(in[0], k_, stride_, pad_),
                                   pool_out(in[1], k_, stride_, pad_),
                                   pool_out(in[2], k_, stride_, pad_)};
  Tensor y = Tensor::zeros({n, ch, out[0], out[1], out[2]});
  argmax_.assign(static_cast<size_t>(y.numel()), -1);

#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < ch; ++c) {
      const float* xc = x.ptr() + (i * ch + c) * in[0] * in[1] * in[2];
      const int64_t base_out = (i * ch + c) * out[0] * out[1] * out[2];
      int64_t o = 0;
      for (int64_t od = 0; od < out[0]; ++od) {
        for (int64_t oh = 0; oh < out[1]; ++oh) {
          for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            int64_t best_idx = -1;
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t d = od * stride_ - pad_ + kd;
              if (d < 0 || d >= in[0]) continue;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t h = oh * stride_ - pad_ + kh;
                if (h < 0 || h >= in[1]) continue;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  const int64_t w = ow * stride_ - pad_ + kw;
                  if (w < 0 || w >= in[2]) continue;
                  const int64_t idx = d * in[1] * in[2] + h * in[2] + w;
                  if (xc[idx] > best) {
                    best = xc[idx];
                    best_idx = idx;
                  }
                }
              }
            }
            y.data[static_cast<size_t>(base_out + o)] = best;
            argmax_[static_cast<size_t>(base_out + o)] =
                (i * ch + c) * in[0] * in[1] * in[2] + best_idx;
          }
        }
      }
    }
  }
  return y;
}

Tensor MaxPool3d::backward(const Tensor& grad_out) {
  Tensor dx;
  dx.shape = in_shape_;
  dx.data.assign(static_cast<size_t>(Tensor::numel_of(in_shape_)), 0.f);
  for (size_t o = 0; o < grad_out.data.size(); ++o) {
    const int64_t idx = argmax_[o];
    if (idx >= 0) dx.data[static_cast<size_t>(idx)] += grad_out.data[o];
  }
  return dx;
}

AvgPool3d::AvgPool3d(int64_t kernel, int64_t stride) : k_(kernel), stride_(stride) {}

Tensor AvgPool3d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  const int64_t n = x.dim(0), ch = x.dim(1);
  const std::array<int64_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<int64_t, 3> out{pool_out(in[0], k_, stride_, 0), pool_out(in[1], k_, stride_, 0),
                                   pool_out(in[2], k_, stride_, 0)};
  Tensor y = Tensor::zeros({n, ch, out[0], out[1], out[2]});

#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < ch; ++c) {
      const float* xc = x.ptr() + (i * ch + c) * in[0] * in[1] * in[2];
      float* yc = y.ptr() + (i * ch + c) * out[0] * out[1] * out[2];
      int64_t o = 0;
      for (int64_t od = 0; od < out[0]; ++od) {
        for (int64_t oh = 0; oh < out[1]; ++oh) {
          for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
            double acc = 0;
            int64_t cnt = 0;
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t d = od * stride_ + kd;
              if (d >= in[0]) continue;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t h = oh * stride_ + kh;
                if (h >= in[1]) continue;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  const int64_t w = ow * stride_ + kw;
                  if (w >= in[2]) continue;
                  acc += xc[d * in[1] * in[2] + h * in[2] + w];
                  ++cnt;
                }
              }
            }
            yc[o] = static_cast<float>(acc / std::max<int64_t>(1, cnt));
          }
        }
      }
    }
  }
  return y;
}

Tensor AvgPool3d::backward(const Tensor& grad_out) {
  Tensor dx;
  dx.shape = in_shape_;
  dx.data.assign(static_cast<size_t>(Tensor::numel_of(in_shape_)), 0.f);
  const int64_t n = in_shape_[0], ch = in_shape_[1];
  const std::array<int64_t, 3> in{in_shape_[2], in_shape_[3], in_shape_[4]};
  const std::array<int64_t, 3> out{grad_out.dim(2), grad_out.dim(3), grad_out.dim(4)};

#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < ch; ++c) {
      const float* gc = grad_out.ptr() + (i * ch + c) * out[0] * out[1] * out[2];
      float* dc = dx.ptr() + (i * ch + c) * in[0] * in[1] * in[2];
      int64_t o = 0;
      for (int64_t od = 0; od < out[0]; ++od) {
        for (int64_t oh = 0; oh < out[1]; ++oh) {
          for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
            int64_t cnt = 0;
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t d = od * stride_ + kd;
              if (d >= in[0]) continue;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t h = oh * stride_ + kh;
                if (h >= in[1]) continue;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  if (ow * stride_ + kw >= in[2]) continue;
                  ++cnt;
                }
              }
            }
            const float g = gc[o] / static_cast<float>(std::max<int64_t>(1, cnt));
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t d = od * stride_ + kd;
              if (d >= in[0]) continue;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t h = oh * stride_ + kh;
                if (h >= in[1]) continue;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  const int64_t w = ow * stride_ + kw;
                  if (w >= in[2]) continue;
                  dc[d * in[1] * in[2] + h * in[2] + w] += g;
                }
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  const int64_t n = x.dim(0), ch = x.dim(1);
  const int64_t vox = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor y = Tensor::zeros({n, ch});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < ch; ++c) {
      const float* xc = x.ptr() + (i * ch + c) * vox;
      double acc = 0;
      for (int64_t v = 0; v < vox; ++v) acc += xc[v];
      y.at2(i, c) = static_cast<float>(acc / static_cast<double>(vox));
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx;
  dx.shape = in_shape_;
  dx.data.assign(static_cast<size_t>(Tensor::numel_of(in_shape_)), 0.f);
  const int64_t n = in_shape_[0], ch = in_shape_[1];
  const int64_t vox = in_shape_[2] * in_shape_[3] * in_shape_[4];
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < ch; ++c) {
      const float g = grad_out.at2(i, c) / static_cast<float>(vox);
      float* dc = dx.ptr() + (i * ch + c) * vox;
      for (int64_t v = 0; v < vox; ++v) dc[v] = g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear / Dropout / LayerNorm / Sequential
// ---------------------------------------------------------------------------

Linear::Linear(std::string name, int64_t in, int64_t out, bool bias)
    : in_(in), out_(out), has_bias_(bias) {
  weight.name = name + ".weight";
  weight.value = Tensor::zeros({out, in});
  weight.grad = Tensor::zeros({out, in});
  if (has_bias_) {
    this->bias.name = name + ".bias";
    this->bias.value = Tensor::zeros({out});
    this->bias.grad = Tensor::zeros({out});
  }
}

Tensor Linear::forward(const Tensor& x, bool) {
  if (x.ndim() != 2 || x.dim(1) != in_) throw Error("linear: bad input shape");
  input_ = x;
  const int64_t n = x.dim(0);
  Tensor y = Tensor::zeros({n, out_});
  gemm_nt(x.ptr(), weight.value.ptr(), y.ptr(), n, in_, out_, false);
  if (has_bias_) {
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t o = 0; o < out_; ++o) y.at2(i, o) += bias.value.data[static_cast<size_t>(o)];
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int64_t n = input_.dim(0);
  // dW += dy^T x
  gemm_tn(grad_out.ptr(), input_.ptr(), weight.grad.ptr(), out_, n, in_, true);
  if (has_bias_) {
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t o = 0; o < out_; ++o) bias.grad.data[static_cast<size_t>(o)] += grad_out.at2(i, o);
    }
  }
  Tensor dx = Tensor::zeros({n, in_});
  gemm(grad_out.ptr(), weight.value.ptr(), dx.ptr(), n, out_, in_, false);
  return dx;
}

void Linear::collect_state(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

void Linear::init(std::mt19937_64& rng) {
  xavier_normal(weight.value, in_, out_, rng);
  if (has_bias_) std::fill(bias.value.data.begin(), bias.value.data.end(), 0.f);
}

Tensor Dropout::forward(const Tensor& x, bool train) {
  if (!train || p_ <= 0) {
    scale_.clear();
    return x;
  }
  scale_.resize(x.data.size());
  const float keep = static_cast<float>(1.0 / (1.0 - p_));
  Tensor y = x;
  for (size_t i = 0; i < y.data.size(); ++i) {
    scale_[i] = uniform01(*rng_) < p_ ? 0.f : keep;
    y.data[i] *= scale_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (scale_.empty()) return grad_out;
  Tensor dx = grad_out;
  for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= scale_[i];
  return dx;
}

LayerNorm::LayerNorm(std::string name, int64_t dim, double eps) : dim_(dim), eps_(eps) {
  gamma.name = name + ".weight";
  gamma.value = Tensor::full({dim}, 1.f);
  gamma.grad = Tensor::zeros({dim});
  beta.name = name + ".bias";
  beta.value = Tensor::zeros({dim});
  beta.grad = Tensor::zeros({dim});
}

Tensor LayerNorm::forward(const Tensor& x, bool) {
  if (x.shape.back() != dim_) throw Error("layernorm: bad trailing dimension");
  const int64_t rows = x.numel() / dim_;
  xhat_ = Tensor::zeros(x.shape);
  inv_std_.assign(static_cast<size_t>(rows), 0.0);
  Tensor y = Tensor::zeros(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.ptr() + r * dim_;
    float* hr = xhat_.ptr() + r * dim_;
    float* yr = y.ptr() + r * dim_;
    double s = 0, s2 = 0;
    for (int64_t j = 0; j < dim_; ++j) {
      s += xr[j];
      s2 += static_cast<double>(xr[j]) * xr[j];
    }
    const double mean = s / static_cast<double>(dim_);
    const double var = std::max(0.0, s2 / static_cast<double>(dim_) - mean * mean);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[static_cast<size_t>(r)] = inv;
    for (int64_t j = 0; j < dim_; ++j) {
      const double h = (xr[j] - mean) * inv;
      hr[j] = static_cast<float>(h);
      yr[j] = static_cast<float>(h * gamma.value.data[static_cast<size_t>(j)] +
                                 beta.value.data[static_cast<size_t>(j)]);
    }
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& grad_out) {
  const int64_t rows = grad_out.numel() / dim_;
  Tensor dx = Tensor::zeros(grad_out.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const float* gr = grad_out.ptr() + r * dim_;
    const float* hr = xhat_.ptr() + r * dim_;
    float* dr = dx.ptr() + r * dim_;
    double sum_g = 0, sum_gh = 0;
    for (int64_t j = 0; j < dim_; ++j) {
      const double gg = static_cast<double>(gr[j]) * gamma.value.data[static_cast<size_t>(j)];
      sum_g += gg;
      sum_gh += gg * hr[j];
      gamma.grad.data[static_cast<size_t>(j)] += gr[j] * hr[j];
      beta.grad.data[static_cast<size_t>(j)] += gr[j];
    }
    const double inv = inv_std_[static_cast<size_t>(r)];
    for (int64_t j = 0; j < dim_; ++j) {
      const double gg = static_cast<double>(gr[j]) * gamma.value.data[static_cast<size_t>(j)];
      dr[j] = static_cast<float>(inv * (gg - sum_g / dim_ - hr[j] * sum_gh / dim_));
    }
  }
  return dx;
}

void LayerNorm::collect_state(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void LayerNorm::init(std::mt19937_64&) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.f);
  std::fill(beta.value.data.begin(), beta.value.data.end(), 0.f);
}

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& m : mods_) cur = m->forward(cur, train);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = mods_.rbegin(); it != mods_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect_state(std::vector<Parameter*>& out) {
  for (auto& m : mods_) m->collect_state(out);
}

void Sequential::init(std::mt19937_64& rng) {
  for (auto& m : mods_) m->init(rng);
}

}  // namespace rano::nn
