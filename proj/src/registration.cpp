#include <algorithm>
#include <cmath>

#include "rano/preprocess.hpp"

namespace rano::prep {

namespace {

struct Mat3 {
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
};

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += a.m[i][k] * b.m[k][j];
      r.m[i][j] = acc;
    }
  }
  return r;
}

// params: [tx ty tz rx ry rz log_sx log_sy log_sz kxy kxz kyz]
constexpr int kNumParams = 12;

Mat3 linear_from_params(const double* p) {
  const double cx = std::cos(p[3]), sx = std::sin(p[3]);
  const double cy = std::cos(p[4]), sy = std::sin(p[4]);
  const double cz = std::cos(p[5]), sz = std::sin(p[5]);
  Mat3 rx, ry, rz;
  rx.m[1][1] = cx; rx.m[1][2] = -sx; rx.m[2][1] = sx; rx.m[2][2] = cx;
  ry.m[0][0] = cy; ry.m[0][2] = sy;  ry.m[2][0] = -sy; ry.m[2][2] = cy;
  rz.m[0][0] = cz; rz.m[0][1] = -sz; rz.m[1][0] = sz;  rz.m[1][1] = cz;
  Mat3 scale;
  scale.m[0][0] = std::exp(p[6]);
  scale.m[1][1] = std::exp(p[7]);
  scale.m[2][2] = std::exp(p[8]);
  Mat3 shear;
  shear.m[0][1] = p[9];
  shear.m[0][2] = p[10];
  shear.m[1][2] = p[11];
  return matmul(matmul(rz, matmul(ry, rx)), matmul(scale, shear));
}

struct Frame {
  std::array<double, 3> center_tmpl{};  // physical
  std::array<double, 3> center_mov{};
};

// x_mov = L (x_tmpl - c_tmpl) + c_mov + t
AffineTransform to_transform(const double* p, const Frame& f) {
  AffineTransform t;
  const Mat3 lin = linear_from_params(p);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) t.linear[i][j] = lin.m[i][j];
  }
  for (int i = 0; i < 3; ++i) {
    double lc = 0;
    for (int j = 0; j < 3; ++j) lc += lin.m[i][j] * f.center_tmpl[j];
    t.offset[i] = f.center_mov[i] + p[i] - lc;
  }
  return t;
}

bool center_of_mass(const VolumeGrid& v, std::array<double, 3>& com) {
  double mass = 0, mx = 0, my = 0, mz = 0;
  for (int64_t z = 0; z < v.dims[2]; ++z) {
    for (int64_t y = 0; y < v.dims[1]; ++y) {
      for (int64_t x = 0; x < v.dims[0]; ++x) {
        const double w = std::fabs(v.at(x, y, z));
        mass += w;
        mx += w * static_cast<double>(x);
        my += w * static_cast<double>(y);
        mz += w * static_cast<double>(z);
      }
    }
  }
  if (mass <= 0) return false;
  com = {mx / mass * v.spacing[0], my / mass * v.spacing[1], mz / mass * v.spacing[2]};
  return true;
}

VolumeGrid downsample2(const VolumeGrid& v) {
  VolumeGrid out;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = std::max<int64_t>(1, v.dims[a] / 2);
    out.spacing[a] = v.spacing[a] * static_cast<double>(v.dims[a]) / static_cast<double>(out.dims[a]);
  }
  out.orientation = v.orientation;
  out.space = v.space;
  out.voxels.resize(static_cast<size_t>(out.size()));
  for (int64_t z = 0; z < out.dims[2]; ++z) {
    for (int64_t y = 0; y < out.dims[1]; ++y) {
      for (int64_t x = 0; x < out.dims[0]; ++x) {
        double acc = 0;
        int n = 0;
        for (int dz = 0; dz < 2; ++dz) {
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t xx = 2 * x + dx, yy = 2 * y + dy, zz = 2 * z + dz;
              if (xx < v.dims[0] && yy < v.dims[1] && zz < v.dims[2]) {
                acc += v.at(xx, yy, zz);
                ++n;
              }
            }
          }
        }
        out.at(x, y, z) = static_cast<float>(acc / std::max(1, n));
      }
    }
  }
  return out;
}

double msd(const VolumeGrid& tmpl, const VolumeGrid& mov, const double* p, const Frame& frame,
           int stride) {
  const AffineTransform t = to_transform(p, frame);
  double acc = 0;
  int64_t n = 0;
  for (int64_t z = 0; z < tmpl.dims[2]; z += stride) {
    for (int64_t y = 0; y < tmpl.dims[1]; y += stride) {
      for (int64_t x = 0; x < tmpl.dims[0]; x += stride) {
        const double px = static_cast<double>(x) * tmpl.spacing[0];
        const double py = static_cast<double>(y) * tmpl.spacing[1];
        const double pz = static_cast<double>(z) * tmpl.spacing[2];
        double q[3];
        for (int i = 0; i < 3; ++i) {
          q[i] = t.linear[i][0] * px + t.linear[i][1] * py + t.linear[i][2] * pz + t.offset[i];
        }
        const float mval = sample_trilinear(mov, q[0] / mov.spacing[0], q[1] / mov.spacing[1],
                                            q[2] / mov.spacing[2]);
        const double d = static_cast<double>(tmpl.at(x, y, z)) - mval;
        acc += d * d;
        ++n;
      }
    }
  }
  return acc / static_cast<double>(std::max<int64_t>(1, n));
}

// Greedy coordinate descent over the active parameter subset. Returns true
// when the step size contracted below min_step (converged).
bool descend(const VolumeGrid& tmpl, const VolumeGrid& mov, double* p, const Frame& frame,
             int stride, const std::vector<int>& active, double t_step0, double a_step0,
             const RegistrationOptions& opts, double* best_inout) {
  constexpr int kMaxSweepsPerScale = 8;
  double scale = 1.0;
  double best = *best_inout;
  int sweeps_at_scale = 0;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    const double sweep_start = best;
    for (int idx : active) {
      const double step0 = idx < 3 ? t_step0 : a_step0;
      const double step = step0 * scale;
      for (double dir : {+1.0, -1.0}) {
        double trial[kNumParams];
        std::copy(p, p + kNumParams, trial);
        trial[idx] += dir * step;
        const double m = msd(tmpl, mov, trial, frame, stride);
        if (m < best - 1e-12) {
          best = m;
          p[idx] = trial[idx];
        }
      }
    }
    ++sweeps_at_scale;
    // Contract the step once a sweep stops making material progress (or the
    // per-scale budget runs out, which bounds drift along flat valleys).
    if (sweep_start - best <= 1e-7 * (sweep_start + 1e-12) ||
        sweeps_at_scale >= kMaxSweepsPerScale) {
      scale *= 0.5;
      sweeps_at_scale = 0;
      if (scale * std::min(t_step0, a_step0) < opts.min_step) {
        *best_inout = best;
        return true;
      }
    }
  }
  *best_inout = best;
  return false;
}

}  // namespace

RegistrationResult register_to_template(const VolumeGrid& v, const VolumeGrid& tmpl,
                                        const RegistrationOptions& opts) {
  RegistrationResult res;
  if (v.has_orientation && !v.orientation.is_ras()) {
    res.reason = "moving volume is not reoriented";
    return res;
  }
  if (tmpl.has_orientation && !tmpl.orientation.is_ras()) {
    res.reason = "template is not reoriented";
    return res;
  }

  Frame frame;
  if (!center_of_mass(tmpl, frame.center_tmpl)) {
    res.reason = "template has no mass";
    return res;
  }
  if (!center_of_mass(v, frame.center_mov)) {
    res.reason = "moving volume has no mass";
    return res;
  }

  // pyramid, coarse to fine
  std::vector<VolumeGrid> pyr_tmpl{tmpl}, pyr_mov{v};
  while (*std::min_element(pyr_tmpl.back().dims.begin(), pyr_tmpl.back().dims.end()) > 16 &&
         *std::min_element(pyr_mov.back().dims.begin(), pyr_mov.back().dims.end()) > 4 &&
         pyr_tmpl.size() < 4) {
    pyr_tmpl.push_back(downsample2(pyr_tmpl.back()));
    pyr_mov.push_back(downsample2(pyr_mov.back()));
  }

  double p[kNumParams] = {0};
  const std::vector<int> stage_translation{0, 1, 2};
  const std::vector<int> stage_rigid{0, 1, 2, 3, 4, 5};
  std::vector<int> stage_affine{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

  res.initial_msd = msd(tmpl, v, p, frame, std::max(1, static_cast<int>(opts.subsample)));

  bool converged = false;
  for (int level = static_cast<int>(pyr_tmpl.size()) - 1; level >= 0; --level) {
    const VolumeGrid& t = pyr_tmpl[static_cast<size_t>(level)];
    const VolumeGrid& m = pyr_mov[static_cast<size_t>(level)];
    const int stride = level == 0 ? std::max(1, static_cast<int>(opts.subsample)) : 1;
    const double t_step = 2.0 * *std::max_element(t.spacing.begin(), t.spacing.end());
    const double a_step = 0.05;

    double best = msd(t, m, p, frame, stride);
    descend(t, m, p, frame, stride, stage_translation, t_step, a_step, opts, &best);
    converged = descend(t, m, p, frame, stride, stage_rigid, t_step, a_step, opts, &best);
    if (opts.allow_affine) {
      converged = descend(t, m, p, frame, stride, stage_affine, t_step, a_step, opts, &best);
    }
  }
  if (!converged) {
    res.reason = "did not converge within sweep budget";
    return res;
  }

  res.transform = to_transform(p, frame);
  res.final_msd = msd(tmpl, v, p, frame, std::max(1, static_cast<int>(opts.subsample)));

  // resample onto the template grid
  VolumeGrid out;
  out.dims = tmpl.dims;
  out.spacing = tmpl.spacing;
  out.orientation = Orientation::ras();
  out.has_orientation = true;
  out.space = SpaceTag::template_space;
  out.voxels.resize(static_cast<size_t>(out.size()));
  for (int64_t z = 0; z < out.dims[2]; ++z) {
    for (int64_t y = 0; y < out.dims[1]; ++y) {
      for (int64_t x = 0; x < out.dims[0]; ++x) {
        double q[3];
        const double px = static_cast<double>(x) * tmpl.spacing[0];
        const double py = static_cast<double>(y) * tmpl.spacing[1];
        const double pz = static_cast<double>(z) * tmpl.spacing[2];
        for (int i = 0; i < 3; ++i) {
          q[i] = res.transform.linear[i][0] * px + res.transform.linear[i][1] * py +
                 res.transform.linear[i][2] * pz + res.transform.offset[i];
        }
        out.at(x, y, z) =
            sample_trilinear(v, q[0] / v.spacing[0], q[1] / v.spacing[1], q[2] / v.spacing[2]);
      }
    }
  }
  res.resampled = std::move(out);
  res.ok = true;
  return res;
}

}  // namespace rano::prep
