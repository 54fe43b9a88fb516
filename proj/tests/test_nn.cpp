#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rano/nn/architectures.hpp"
#include "rano/nn/layers.hpp"

using namespace rano;
using namespace rano::nn;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(scale * normal01(rng));
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& c) {
  double acc = 0;
  for (size_t i = 0; i < y.data.size(); ++i) acc += static_cast<double>(y.data[i]) * c.data[i];
  return acc;
}

// Directional finite-difference check of a module's input gradient:
// compares <grad, v> with (L(x+hv) - L(x-hv)) / 2h for random directions v.
void check_input_gradient(Module& m, const Tensor& x, std::mt19937_64& rng, bool train = true,
                          double h = 1e-2, double tol = 5e-3) {
  Tensor y = m.forward(x, train);
  const Tensor c = random_tensor(y.shape, rng);
  const Tensor g = m.backward(c);

  for (int rep = 0; rep < 4; ++rep) {
    Tensor v = random_tensor(x.shape, rng);
    double norm = 0;
    for (float z : v.data) norm += static_cast<double>(z) * z;
    norm = std::sqrt(norm);
    for (auto& z : v.data) z = static_cast<float>(z / norm);

    Tensor xp = x, xm = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
      xp.data[i] += static_cast<float>(h) * v.data[i];
      xm.data[i] -= static_cast<float>(h) * v.data[i];
    }
    const double lp = weighted_sum(m.forward(xp, train), c);
    const double lm = weighted_sum(m.forward(xm, train), c);
    const double fd = (lp - lm) / (2 * h);
    double analytic = 0;
    for (size_t i = 0; i < g.data.size(); ++i) {
      analytic += static_cast<double>(g.data[i]) * v.data[i];
    }
    const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-4});
    CHECK(std::fabs(fd - analytic) / denom < tol);
  }
}

// Directional finite-difference check of a parameter's gradient.
void check_param_gradient(Module& m, Parameter& p, const Tensor& x, std::mt19937_64& rng,
                          bool train = true, double h = 1e-2, double tol = 5e-3) {
  Tensor y = m.forward(x, train);
  const Tensor c = random_tensor(y.shape, rng);
  p.zero_grad();
  m.backward(c);
  const Tensor g = p.grad;

  Tensor v = random_tensor(p.value.shape, rng);
  double norm = 0;
  for (float z : v.data) norm += static_cast<double>(z) * z;
  norm = std::sqrt(norm);
  for (auto& z : v.data) z = static_cast<float>(z / norm);

  const Tensor saved = p.value;
  for (size_t i = 0; i < p.value.data.size(); ++i) {
    p.value.data[i] = saved.data[i] + static_cast<float>(h) * v.data[i];
  }
  const double lp = weighted_sum(m.forward(x, train), c);
  for (size_t i = 0; i < p.value.data.size(); ++i) {
    p.value.data[i] = saved.data[i] - static_cast<float>(h) * v.data[i];
  }
  const double lm = weighted_sum(m.forward(x, train), c);
  p.value = saved;

  const double fd = (lp - lm) / (2 * h);
  double analytic = 0;
  for (size_t i = 0; i < g.data.size(); ++i) analytic += static_cast<double>(g.data[i]) * v.data[i];
  const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-4});
  CHECK(std::fabs(fd - analytic) / denom < tol);
}

}  // namespace

TEST_CASE("conv3d forward matches a naive seven-loop oracle") {
  std::mt19937_64 rng(1);
  const int64_t n = 2, cin = 3, cout = 4, k = 3, stride = 2, pad = 1;
  const int64_t D = 5, H = 5, W = 5;
  Conv3d conv("c", cin, cout, k, stride, pad, true);
  conv.init(rng);
  const Tensor x = random_tensor({n, cin, D, H, W}, rng);
  const Tensor y = conv.forward(x, true);

  const auto out = Conv3d::out_dims({D, H, W}, k, stride, pad);
  REQUIRE(y.shape == std::vector<int64_t>({n, cout, out[0], out[1], out[2]}));

  for (int64_t i = 0; i < n; ++i) {
    for (int64_t co = 0; co < cout; ++co) {
      for (int64_t od = 0; od < out[0]; ++od) {
        for (int64_t oh = 0; oh < out[1]; ++oh) {
          for (int64_t ow = 0; ow < out[2]; ++ow) {
            double acc = conv.bias.value.data[static_cast<size_t>(co)];
            for (int64_t ci = 0; ci < cin; ++ci) {
              for (int64_t kd = 0; kd < k; ++kd) {
                for (int64_t kh = 0; kh < k; ++kh) {
                  for (int64_t kw = 0; kw < k; ++kw) {
                    const int64_t d = od * stride - pad + kd;
                    const int64_t hh = oh * stride - pad + kh;
                    const int64_t ww = ow * stride - pad + kw;
                    if (d < 0 || d >= D || hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                    const float wv =
                        conv.weight.value
                            .data[static_cast<size_t>((((co * cin + ci) * k + kd) * k + kh) * k + kw)];
                    acc += static_cast<double>(wv) * x.at5(i, ci, d, hh, ww);
                  }
                }
              }
            }
            CHECK(y.at5(i, co, od, oh, ow) == doctest::Approx(acc).epsilon(1e-4));
          }
        }
      }
    }
  }
}

TEST_CASE("conv3d gradients agree with finite differences") {
  std::mt19937_64 rng(2);
  Conv3d conv("c", 2, 3, 3, 1, 1, true);
  conv.init(rng);
  const Tensor x = random_tensor({2, 2, 4, 4, 4}, rng);
  check_input_gradient(conv, x, rng);
  check_param_gradient(conv, conv.weight, x, rng);
  check_param_gradient(conv, conv.bias, x, rng);
}

TEST_CASE("batchnorm3d train-mode gradients agree with finite differences") {
  std::mt19937_64 rng(3);
  BatchNorm3d bn("b", 3);
  const Tensor x = random_tensor({2, 3, 3, 3, 3}, rng, 2.0);
  check_input_gradient(bn, x, rng, true, 1e-2, 1e-2);
  check_param_gradient(bn, bn.gamma, x, rng, true, 1e-2, 1e-2);
  check_param_gradient(bn, bn.beta, x, rng, true, 1e-2, 1e-2);
}

TEST_CASE("batchnorm3d eval mode uses running stats and has a linear backward") {
  std::mt19937_64 rng(4);
  BatchNorm3d bn("b", 2);
  // a few train passes to move the running stats
  for (int i = 0; i < 5; ++i) bn.forward(random_tensor({4, 2, 3, 3, 3}, rng, 1.5), true);
  const Tensor x = random_tensor({2, 2, 3, 3, 3}, rng);
  check_input_gradient(bn, x, rng, /*train=*/false);
  // eval forward is per-element affine; same input twice gives identical output
  const Tensor y1 = bn.forward(x, false);
  const Tensor y2 = bn.forward(x, false);
  CHECK(y1.data == y2.data);
}

TEST_CASE("pool layers propagate gradients per finite differences") {
  std::mt19937_64 rng(5);
  MaxPool3d mp(3, 2, 1);
  check_input_gradient(mp, random_tensor({2, 2, 5, 5, 5}, rng), rng);
  AvgPool3d ap(2, 2);
  check_input_gradient(ap, random_tensor({2, 2, 4, 4, 4}, rng), rng);
  GlobalAvgPool gap;
  check_input_gradient(gap, random_tensor({2, 3, 3, 4, 5}, rng), rng);
}

TEST_CASE("avg pool clamps collapsed extents to one instead of failing") {
  AvgPool3d ap(2, 2);
  Tensor x = Tensor::full({1, 1, 1, 1, 1}, 5.f);
  const Tensor y = ap.forward(x, true);
  CHECK(y.shape == std::vector<int64_t>({1, 1, 1, 1, 1}));
  CHECK(y.data[0] == 5.f);
}

TEST_CASE("linear, layernorm and gelu gradients agree with finite differences") {
  std::mt19937_64 rng(6);
  Linear lin("l", 7, 5);
  lin.init(rng);
  const Tensor x = random_tensor({3, 7}, rng);
  check_input_gradient(lin, x, rng);
  check_param_gradient(lin, lin.weight, x, rng);
  check_param_gradient(lin, lin.bias, x, rng);

  LayerNorm ln("n", 6);
  const Tensor x2 = random_tensor({4, 6}, rng, 2.0);
  check_input_gradient(ln, x2, rng, true, 1e-2, 1e-2);
  check_param_gradient(ln, ln.gamma, x2, rng, true, 1e-2, 1e-2);

  GELU gelu;
  check_input_gradient(gelu, random_tensor({3, 9}, rng), rng);
}

TEST_CASE("dropout scales kept units and is the identity in eval mode") {
  std::mt19937_64 rng(7);
  std::mt19937_64 drop_rng(9);
  Dropout d(0.5, &drop_rng);
  const Tensor x = Tensor::full({1, 1000}, 1.f);
  const Tensor y = d.forward(x, true);
  int kept = 0;
  for (float v : y.data) {
    CHECK((v == 0.f || v == 2.f));
    kept += v != 0.f;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
  const Tensor ye = d.forward(x, false);
  CHECK(ye.data == x.data);
}

TEST_CASE("xavier init is deterministic per seed and scales with fan") {
  std::mt19937_64 a(11), b(11), c(12);
  Tensor w1 = Tensor::zeros({64, 32});
  Tensor w2 = Tensor::zeros({64, 32});
  Tensor w3 = Tensor::zeros({64, 32});
  xavier_normal(w1, 32, 64, a);
  xavier_normal(w2, 32, 64, b);
  xavier_normal(w3, 32, 64, c);
  CHECK(w1.data == w2.data);
  CHECK(w1.data != w3.data);
  double s2 = 0;
  for (float v : w1.data) s2 += static_cast<double>(v) * v;
  const double stddev = std::sqrt(s2 / static_cast<double>(w1.numel()));
  CHECK(stddev == doctest::Approx(std::sqrt(2.0 / 96.0)).epsilon(0.1));
}

// ---------------------------------------------------------------------------
// whole networks
// ---------------------------------------------------------------------------

namespace {

void check_network_input_gradient(Network& net, const Tensor& x, std::mt19937_64& rng,
                                  double h = 2e-2, double tol = 1e-2) {
  const Tensor logits = net.forward(x, nullptr, /*train=*/false);
  const Tensor c = random_tensor(logits.shape, rng);
  net.zero_grad();
  const Tensor g = net.backward(c);
  REQUIRE(g.shape == x.shape);

  // probe along the gradient itself: the direction with the strongest signal,
  // so float32 forward noise cannot swamp the comparison
  Tensor v = g;
  double norm = 0;
  for (float z : v.data) norm += static_cast<double>(z) * z;
  norm = std::sqrt(norm);
  REQUIRE(norm > 0);
  for (auto& z : v.data) z = static_cast<float>(z / norm);

  Tensor xp = x, xm = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    xp.data[i] += static_cast<float>(h) * v.data[i];
    xm.data[i] -= static_cast<float>(h) * v.data[i];
  }
  const double lp = weighted_sum(net.forward(xp, nullptr, false), c);
  const double lm = weighted_sum(net.forward(xm, nullptr, false), c);
  const double fd = (lp - lm) / (2 * h);
  double analytic = 0;
  for (size_t i = 0; i < g.data.size(); ++i) analytic += static_cast<double>(g.data[i]) * v.data[i];
  const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-4});
  CHECK(std::fabs(fd - analytic) / denom < tol);
}

}  // namespace

TEST_CASE("densenet121 3d emits 4 logits and passes the input-gradient check") {
  std::mt19937_64 rng(21);
  DenseNet3d net(2, 0, 4, {6, 12, 24, 16});
  net.init_weights(123);
  const Tensor x = random_tensor({2, 2, 16, 16, 16}, rng);
  const Tensor y = net.forward(x, nullptr, true);
  CHECK(y.shape == std::vector<int64_t>({2, 4}));
  check_network_input_gradient(net, x, rng);
}

TEST_CASE("vit3d emits 4 logits and passes the input-gradient check") {
  std::mt19937_64 rng(22);
  VitConfig cfg;
  cfg.input_dhw = {16, 16, 16};
  cfg.patch = 8;
  cfg.dim = 32;
  cfg.depth = 2;
  cfg.heads = 4;
  ViT3d net(3, 0, 4, cfg);
  net.init_weights(7);
  const Tensor x = random_tensor({2, 3, 16, 16, 16}, rng);
  const Tensor y = net.forward(x, nullptr, true);
  CHECK(y.shape == std::vector<int64_t>({2, 4}));
  check_network_input_gradient(net, x, rng);
}

TEST_CASE("vit3d rejects a patch size that does not divide the grid") {
  VitConfig cfg;
  cfg.input_dhw = {15, 15, 15};
  cfg.patch = 8;
  CHECK_THROWS_AS(ViT3d(1, 0, 4, cfg), Error);
}

TEST_CASE("alexnet3d emits 4 logits and passes the input-gradient check") {
  std::mt19937_64 rng(23);
  AlexNet3d net(1, 0, 4, 0.5);
  net.init_weights(55);
  const Tensor x = random_tensor({2, 1, 16, 16, 16}, rng);
  const Tensor y = net.forward(x, nullptr, true);
  CHECK(y.shape == std::vector<int64_t>({2, 4}));
  check_network_input_gradient(net, x, rng);  // eval mode: dropout off
}

TEST_CASE("clinical fusion: gradients reach the clinical branch") {
  std::mt19937_64 rng(24);
  AlexNet3d net(1, 5, 4, 0.0);
  net.init_weights(9);
  const Tensor x = random_tensor({2, 1, 16, 16, 16}, rng);
  const Tensor clin = random_tensor({2, 5}, rng);
  const Tensor y = net.forward(x, &clin, true);
  CHECK(y.shape == std::vector<int64_t>({2, 4}));
  net.zero_grad();
  net.backward(Tensor::full({2, 4}, 1.f));
  double gsum = 0;
  for (float v : net.clinical_grad().data) gsum += std::fabs(v);
  CHECK(gsum > 0);
  // missing clinical vector is an error when the model expects one
  CHECK_THROWS_AS(net.forward(x, nullptr, true), Error);
}

TEST_CASE("network init is deterministic and reset_head swaps only the head") {
  DenseNet3d a(1, 0, 4, {2, 2, 2, 2});
  DenseNet3d b(1, 0, 4, {2, 2, 2, 2});
  a.init_weights(77);
  b.init_weights(77);
  uint64_t ha = 0, hb = 0;
  for (auto* p : a.parameters()) ha ^= p->value.content_hash();
  for (auto* p : b.parameters()) hb ^= p->value.content_hash();
  CHECK(ha == hb);

  a.reset_head(24, 5);
  CHECK(a.n_classes() == 24);
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({1, 1, 16, 16, 16}, rng);
  CHECK(a.forward(x, nullptr, false).dim(1) == 24);
}

TEST_CASE("parameter counts order densenet121 < densenet169 < densenet264") {
  DenseNet3d d121(8, 0, 4, {6, 12, 24, 16});
  DenseNet3d d169(8, 0, 4, {6, 12, 32, 32});
  DenseNet3d d264(8, 0, 4, {6, 12, 64, 48});
  CHECK(d121.parameter_count() < d169.parameter_count());
  CHECK(d169.parameter_count() < d264.parameter_count());
}
