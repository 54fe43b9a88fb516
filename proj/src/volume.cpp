#include "rano/volume.hpp"

#include <algorithm>
#include <cmath>

namespace rano {

std::optional<Orientation> Orientation::parse(std::string_view s) {
  if (s.size() != 3) return std::nullopt;
  auto axis_of = [](char c) -> int {
    switch (c) {
      case 'R': case 'L': return 0;
      case 'A': case 'P': return 1;
      case 'S': case 'I': return 2;
      default: return -1;
    }
  };
  bool seen[3] = {false, false, false};
  Orientation o;
  for (int i = 0; i < 3; ++i) {
    int a = axis_of(s[i]);
    if (a < 0 || seen[a]) return std::nullopt;
    seen[a] = true;
    o.codes[i] = s[i];
  }
  return o;
}

float sample_trilinear(const VolumeGrid& v, double x, double y, double z) {
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t z0 = static_cast<int64_t>(std::floor(z));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double fz = z - static_cast<double>(z0);

  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz) {
    const int64_t zz = z0 + dz;
    if (zz < 0 || zz >= v.dims[2]) continue;
    const double wz = dz ? fz : 1.0 - fz;
    for (int dy = 0; dy <= 1; ++dy) {
      const int64_t yy = y0 + dy;
      if (yy < 0 || yy >= v.dims[1]) continue;
      const double wy = dy ? fy : 1.0 - fy;
      for (int dx = 0; dx <= 1; ++dx) {
        const int64_t xx = x0 + dx;
        if (xx < 0 || xx >= v.dims[0]) continue;
        const double wx = dx ? fx : 1.0 - fx;
        acc += wx * wy * wz * static_cast<double>(v.at(xx, yy, zz));
      }
    }
  }
  return static_cast<float>(acc);
}

VolumeGrid resize_trilinear(const VolumeGrid& v, std::array<int64_t, 3> out_dims) {
  VolumeGrid out;
  out.dims = out_dims;
  out.orientation = v.orientation;
  out.space = v.space;
  for (int a = 0; a < 3; ++a) {
    out.spacing[a] = v.spacing[a] * static_cast<double>(v.dims[a]) / static_cast<double>(out_dims[a]);
  }
  out.voxels.resize(static_cast<size_t>(out.size()));
  // Align the two grids over the same physical extent (voxel centers at i+0.5).
  std::array<double, 3> scale;
  for (int a = 0; a < 3; ++a) {
    scale[a] = static_cast<double>(v.dims[a]) / static_cast<double>(out_dims[a]);
  }
  for (int64_t z = 0; z < out.dims[2]; ++z) {
    const double sz = (static_cast<double>(z) + 0.5) * scale[2] - 0.5;
    for (int64_t y = 0; y < out.dims[1]; ++y) {
      const double sy = (static_cast<double>(y) + 0.5) * scale[1] - 0.5;
      for (int64_t x = 0; x < out.dims[0]; ++x) {
        const double sx = (static_cast<double>(x) + 0.5) * scale[0] - 0.5;
        out.at(x, y, z) = sample_trilinear(v, sx, sy, sz);
      }
    }
  }
  return out;
}

}  // namespace rano
