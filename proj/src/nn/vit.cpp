#include <cmath>

#include "rano/nn/architectures.hpp"

namespace rano::nn {

namespace {

// (N, E, gd, gh, gw) -> (N, T, E)
Tensor grid_to_tokens(const Tensor& g) {
  const int64_t n = g.dim(0), e = g.dim(1);
  const int64_t t = g.dim(2) * g.dim(3) * g.dim(4);
  Tensor out = Tensor::zeros({n, t, e});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < e; ++c) {
      const float* src = g.ptr() + (i * e + c) * t;
      for (int64_t tok = 0; tok < t; ++tok) out.data[(i * t + tok) * e + c] = src[tok];
    }
  }
  return out;
}

// (N, T, E) -> (N, E, gd, gh, gw)
Tensor tokens_to_grid(const Tensor& tok, std::array<int64_t, 3> grid) {
  const int64_t n = tok.dim(0), t = tok.dim(1), e = tok.dim(2);
  Tensor out = Tensor::zeros({n, e, grid[0], grid[1], grid[2]});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < e; ++c) {
      float* dst = out.ptr() + (i * e + c) * t;
      for (int64_t k = 0; k < t; ++k) dst[k] = tok.data[(i * t + k) * e + c];
    }
  }
  return out;
}

}  // namespace

struct ViT3d::Block {
  Block(const std::string& name, int64_t dim, int heads, double mlp_ratio)
      : ln1(name + ".ln1", dim),
        ln2(name + ".ln2", dim),
        wq(name + ".attn.q", dim, dim),
        wk(name + ".attn.k", dim, dim),
        wv(name + ".attn.v", dim, dim),
        wo(name + ".attn.out", dim, dim),
        fc1(name + ".mlp.fc1", dim, static_cast<int64_t>(mlp_ratio * static_cast<double>(dim))),
        fc2(name + ".mlp.fc2", static_cast<int64_t>(mlp_ratio * static_cast<double>(dim)), dim),
        heads_(heads),
        dim_(dim),
        head_dim_(dim / heads) {
    if (dim % heads != 0) throw Error("vit: embedding dim must be divisible by head count");
  }

  Tensor forward(const Tensor& x, bool train) {
    const int64_t n = x.dim(0), t = x.dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

    Tensor h = ln1.forward(x, train).reshaped({n * t, dim_});
    q_ = wq.forward(h, train);
    k_ = wk.forward(h, train);
    v_ = wv.forward(h, train);

    attn_ = Tensor::zeros({n, heads_, t, t});
    Tensor o = Tensor::zeros({n * t, dim_});
    for (int64_t i = 0; i < n; ++i) {
      for (int h_i = 0; h_i < heads_; ++h_i) {
        const int64_t off = h_i * head_dim_;
        float* p = attn_.ptr() + ((i * heads_ + h_i) * t) * t;
        for (int64_t a = 0; a < t; ++a) {
          const float* qa = q_.ptr() + (i * t + a) * dim_ + off;
          double mx = -1e300;
          for (int64_t b = 0; b < t; ++b) {
            const float* kb = k_.ptr() + (i * t + b) * dim_ + off;
            double s = 0;
            for (int64_t d = 0; d < head_dim_; ++d) s += static_cast<double>(qa[d]) * kb[d];
            p[a * t + b] = static_cast<float>(s * scale);
            mx = std::max(mx, s * scale);
          }
          double z = 0;
          for (int64_t b = 0; b < t; ++b) {
            p[a * t + b] = static_cast<float>(std::exp(p[a * t + b] - mx));
            z += p[a * t + b];
          }
          float* oa = o.ptr() + (i * t + a) * dim_ + off;
          for (int64_t b = 0; b < t; ++b) {
            p[a * t + b] = static_cast<float>(p[a * t + b] / z);
            const float* vb = v_.ptr() + (i * t + b) * dim_ + off;
            const float w = p[a * t + b];
            for (int64_t d = 0; d < head_dim_; ++d) oa[d] += w * vb[d];
          }
        }
      }
    }
    Tensor attn_out = wo.forward(o, train);
    attn_in_ = std::move(o);

    Tensor mid = x;
    for (int64_t i = 0; i < mid.numel(); ++i) mid.data[i] += attn_out.data[i];
    mid_ = mid;

    Tensor m = ln2.forward(mid, train).reshaped({n * t, dim_});
    Tensor y = fc2.forward(gelu.forward(fc1.forward(m, train), train), train);
    Tensor out = mid;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += y.data[i];
    return out;
  }

  Tensor backward(const Tensor& g) {
    const int64_t n = g.dim(0), t = g.dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

    // mlp branch
    Tensor gy = g.reshaped({n * t, dim_});
    Tensor gm = fc1.backward(gelu.backward(fc2.backward(gy)));
    Tensor gmid = ln2.backward(gm.reshaped({n, t, dim_}));
    for (int64_t i = 0; i < gmid.numel(); ++i) gmid.data[i] += g.data[static_cast<size_t>(i)];

    // attention branch
    Tensor go = wo.backward(gmid.reshaped({n * t, dim_}));
    Tensor gq = Tensor::zeros({n * t, dim_});
    Tensor gk = Tensor::zeros({n * t, dim_});
    Tensor gv = Tensor::zeros({n * t, dim_});
    for (int64_t i = 0; i < n; ++i) {
      for (int h_i = 0; h_i < heads_; ++h_i) {
        const int64_t off = h_i * head_dim_;
        const float* p = attn_.ptr() + ((i * heads_ + h_i) * t) * t;
        std::vector<double> dp(static_cast<size_t>(t));
        for (int64_t a = 0; a < t; ++a) {
          const float* ga = go.ptr() + (i * t + a) * dim_ + off;
          // dP and dV
          double dot = 0;
          for (int64_t b = 0; b < t; ++b) {
            const float* vb = v_.ptr() + (i * t + b) * dim_ + off;
            double s = 0;
            for (int64_t d = 0; d < head_dim_; ++d) s += static_cast<double>(ga[d]) * vb[d];
            dp[static_cast<size_t>(b)] = s;
            dot += s * p[a * t + b];
            float* gvb = gv.ptr() + (i * t + b) * dim_ + off;
            const float w = p[a * t + b];
            for (int64_t d = 0; d < head_dim_; ++d) gvb[d] += w * ga[d];
          }
          // softmax backward + matmul backward
          const float* qa = q_.ptr() + (i * t + a) * dim_ + off;
          float* gqa = gq.ptr() + (i * t + a) * dim_ + off;
          for (int64_t b = 0; b < t; ++b) {
            const double ds = p[a * t + b] * (dp[static_cast<size_t>(b)] - dot) * scale;
            const float* kb = k_.ptr() + (i * t + b) * dim_ + off;
            float* gkb = gk.ptr() + (i * t + b) * dim_ + off;
            for (int64_t d = 0; d < head_dim_; ++d) {
              gqa[d] += static_cast<float>(ds * kb[d]);
              gkb[d] += static_cast<float>(ds * qa[d]);
            }
          }
        }
      }
    }
    Tensor gh = wq.backward(gq);
    Tensor gh2 = wk.backward(gk);
    Tensor gh3 = wv.backward(gv);
    for (int64_t i = 0; i < gh.numel(); ++i) gh.data[i] += gh2.data[i] + gh3.data[i];
    Tensor gx = ln1.backward(gh.reshaped({n, t, dim_}));
    for (int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += gmid.data[static_cast<size_t>(i)];
    return gx;
  }

  void collect_state(std::vector<Parameter*>& out) {
    ln1.collect_state(out);
    wq.collect_state(out);
    wk.collect_state(out);
    wv.collect_state(out);
    wo.collect_state(out);
    ln2.collect_state(out);
    fc1.collect_state(out);
    fc2.collect_state(out);
  }

  void init(std::mt19937_64& rng) {
    ln1.init(rng);
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
    wo.init(rng);
    ln2.init(rng);
    fc1.init(rng);
    fc2.init(rng);
  }

  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear fc1, fc2;
  GELU gelu;

 private:
  int heads_;
  int64_t dim_, head_dim_;
  Tensor q_, k_, v_, attn_, attn_in_, mid_;
};

ViT3d::~ViT3d() = default;

ViT3d::ViT3d(int64_t in_channels, int64_t clinical_dim, int n_classes, const VitConfig& cfg)
    : Network(in_channels, clinical_dim, n_classes), cfg_(cfg) {
  for (int a = 0; a < 3; ++a) {
    if (cfg.input_dhw[static_cast<size_t>(a)] % cfg.patch != 0) {
      throw Error("vit: patch size " + std::to_string(cfg.patch) +
                  " must divide the input grid extent " +
                  std::to_string(cfg.input_dhw[static_cast<size_t>(a)]));
    }
    grid_[static_cast<size_t>(a)] = cfg.input_dhw[static_cast<size_t>(a)] / cfg.patch;
  }
  tokens_ = grid_[0] * grid_[1] * grid_[2];
  patch_embed_ = std::make_unique<Conv3d>("patch_embed", in_channels, cfg.dim, cfg.patch,
                                          cfg.patch, 0, true);
  cls_token_.name = "cls_token";
  cls_token_.value = Tensor::zeros({1, cfg.dim});
  cls_token_.grad = Tensor::zeros({1, cfg.dim});
  pos_embed_.name = "pos_embed";
  pos_embed_.value = Tensor::zeros({tokens_ + 1, cfg.dim});
  pos_embed_.grad = Tensor::zeros({tokens_ + 1, cfg.dim});
  for (int b = 0; b < cfg.depth; ++b) {
    blocks_.push_back(
        std::make_unique<Block>("block" + std::to_string(b + 1), cfg.dim, cfg.heads, cfg.mlp_ratio));
  }
  final_norm_ = std::make_unique<LayerNorm>("final_norm", cfg.dim);
}

Tensor ViT3d::backbone_forward(const Tensor& x, bool train) {
  if (x.dim(2) != cfg_.input_dhw[0] || x.dim(3) != cfg_.input_dhw[1] ||
      x.dim(4) != cfg_.input_dhw[2]) {
    throw Error("vit: input grid does not match the configured input size");
  }
  const int64_t n = x.dim(0);
  Tensor patches = grid_to_tokens(patch_embed_->forward(x, train));  // (N, T, E)

  Tensor tok = Tensor::zeros({n, tokens_ + 1, cfg_.dim});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t e = 0; e < cfg_.dim; ++e) {
      tok.data[(i * (tokens_ + 1)) * cfg_.dim + e] =
          cls_token_.value.data[static_cast<size_t>(e)] + pos_embed_.value.data[static_cast<size_t>(e)];
    }
    for (int64_t t = 0; t < tokens_; ++t) {
      for (int64_t e = 0; e < cfg_.dim; ++e) {
        tok.data[(i * (tokens_ + 1) + t + 1) * cfg_.dim + e] =
            patches.data[(i * tokens_ + t) * cfg_.dim + e] +
            pos_embed_.value.data[static_cast<size_t>((t + 1) * cfg_.dim + e)];
      }
    }
  }

  for (auto& b : blocks_) tok = b->forward(tok, train);
  final_tokens_ = tok;

  // patch-token grid tap (cls excluded)
  Tensor grid_tokens = Tensor::zeros({n, tokens_, cfg_.dim});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(tok.ptr() + (i * (tokens_ + 1) + 1) * cfg_.dim,
              tok.ptr() + (i + 1) * (tokens_ + 1) * cfg_.dim,
              grid_tokens.ptr() + i * tokens_ * cfg_.dim);
  }
  tap_values_["tokens"] = tokens_to_grid(grid_tokens, grid_);

  Tensor normed = final_norm_->forward(tok, train);
  Tensor feat = Tensor::zeros({n, cfg_.dim});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(normed.ptr() + (i * (tokens_ + 1)) * cfg_.dim,
              normed.ptr() + (i * (tokens_ + 1)) * cfg_.dim + cfg_.dim, feat.ptr() + i * cfg_.dim);
  }
  return feat;
}

Tensor ViT3d::backbone_backward(const Tensor& grad_features) {
  const int64_t n = grad_features.dim(0);
  Tensor gnormed = Tensor::zeros({n, tokens_ + 1, cfg_.dim});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(grad_features.ptr() + i * cfg_.dim, grad_features.ptr() + (i + 1) * cfg_.dim,
              gnormed.ptr() + (i * (tokens_ + 1)) * cfg_.dim);
  }
  Tensor gtok = final_norm_->backward(gnormed);

  {
    Tensor gg = Tensor::zeros({n, tokens_, cfg_.dim});
    for (int64_t i = 0; i < n; ++i) {
      std::copy(gtok.ptr() + (i * (tokens_ + 1) + 1) * cfg_.dim,
                gtok.ptr() + (i + 1) * (tokens_ + 1) * cfg_.dim, gg.ptr() + i * tokens_ * cfg_.dim);
    }
    tap_grads_["tokens"] = tokens_to_grid(gg, grid_);
  }

  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) gtok = (*it)->backward(gtok);

  Tensor gpatches = Tensor::zeros({n, tokens_, cfg_.dim});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t e = 0; e < cfg_.dim; ++e) {
      cls_token_.grad.data[static_cast<size_t>(e)] +=
          gtok.data[(i * (tokens_ + 1)) * cfg_.dim + e];
    }
    for (int64_t t = 0; t <= tokens_; ++t) {
      for (int64_t e = 0; e < cfg_.dim; ++e) {
        pos_embed_.grad.data[static_cast<size_t>(t * cfg_.dim + e)] +=
            gtok.data[(i * (tokens_ + 1) + t) * cfg_.dim + e];
      }
    }
    for (int64_t t = 0; t < tokens_; ++t) {
      std::copy(gtok.ptr() + (i * (tokens_ + 1) + t + 1) * cfg_.dim,
                gtok.ptr() + (i * (tokens_ + 1) + t + 2) * cfg_.dim,
                gpatches.ptr() + (i * tokens_ + t) * cfg_.dim);
    }
  }
  return patch_embed_->backward(tokens_to_grid(gpatches, grid_));
}

void ViT3d::collect_backbone_state(std::vector<Parameter*>& out) {
  patch_embed_->collect_state(out);
  out.push_back(&cls_token_);
  out.push_back(&pos_embed_);
  for (auto& b : blocks_) b->collect_state(out);
  final_norm_->collect_state(out);
}

void ViT3d::init_backbone(std::mt19937_64& rng) {
  patch_embed_->init(rng);
  // token/position embeddings follow the usual small-normal convention
  for (auto& v : cls_token_.value.data) v = static_cast<float>(0.02 * normal01(rng));
  for (auto& v : pos_embed_.value.data) v = static_cast<float>(0.02 * normal01(rng));
  for (auto& b : blocks_) b->init(rng);
  final_norm_->init(rng);
}

}  // namespace rano::nn
