#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rano/common.hpp"

namespace rano {

enum class SpaceTag { native, template_space };

/// Axis-direction code: codes[i] names the anatomical direction of increasing
/// voxel index along array axis i. One of R/L, A/P, S/I per axis.
struct Orientation {
  std::array<char, 3> codes{'R', 'A', 'S'};

  static Orientation ras() { return Orientation{}; }
  static std::optional<Orientation> parse(std::string_view s);

  std::string str() const { return std::string(codes.begin(), codes.end()); }
  bool is_ras() const { return codes[0] == 'R' && codes[1] == 'A' && codes[2] == 'S'; }
  bool operator==(const Orientation&) const = default;
};

/// A 3D scalar image. Voxels are stored x-fastest (NIfTI order):
/// index = x + dims[0] * (y + dims[1] * z).
struct VolumeGrid {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Orientation orientation;
  bool has_orientation = true;  // false when the source file carried no qform/sform
  SpaceTag space = SpaceTag::native;
  std::vector<float> voxels;

  int64_t size() const { return dims[0] * dims[1] * dims[2]; }

  int64_t index(int64_t x, int64_t y, int64_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  float& at(int64_t x, int64_t y, int64_t z) { return voxels[index(x, y, z)]; }
  float at(int64_t x, int64_t y, int64_t z) const { return voxels[index(x, y, z)]; }

  bool same_grid(const VolumeGrid& o) const {
    return dims == o.dims;
  }

  static VolumeGrid filled(std::array<int64_t, 3> dims, float value) {
    VolumeGrid v;
    v.dims = dims;
    v.voxels.assign(static_cast<size_t>(v.size()), value);
    return v;
  }
};

/// Trilinear sample at continuous voxel coordinates; out-of-bounds reads 0.
float sample_trilinear(const VolumeGrid& v, double x, double y, double z);

/// Resize to a target shape by trilinear interpolation of the unit cube.
VolumeGrid resize_trilinear(const VolumeGrid& v, std::array<int64_t, 3> out_dims);

}  // namespace rano
