#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "rano/common.hpp"

namespace rano::nn {

/// Dense row-major float tensor. Volumetric activations are (N, C, D, H, W);
/// feature matrices are (N, F); token stacks are (N, T, E).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.f);
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape[i]; }
  size_t ndim() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  Tensor reshaped(std::vector<int64_t> s) const {
    if (numel_of(s) != numel()) throw Error("reshape: element count mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  // (N, F)
  float& at2(int64_t n, int64_t f) { return data[static_cast<size_t>(n * shape[1] + f)]; }
  float at2(int64_t n, int64_t f) const { return data[static_cast<size_t>(n * shape[1] + f)]; }

  // (N, C, D, H, W)
  int64_t index5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
    return (((n * shape[1] + c) * shape[2] + d) * shape[3] + h) * shape[4] + w;
  }
  float& at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) {
    return data[static_cast<size_t>(index5(n, c, d, h, w))];
  }
  float at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(index5(n, c, d, h, w))];
  }

  uint64_t content_hash() const {
    uint64_t h = fnv1a(shape.data(), shape.size() * sizeof(int64_t));
    return fnv1a(data.data(), data.size() * sizeof(float), h);
  }
};

/// Platform-stable U(0,1) from a raw 64-bit stream.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Platform-stable standard normal (Box-Muller).
double normal01(std::mt19937_64& rng);

}  // namespace rano::nn
