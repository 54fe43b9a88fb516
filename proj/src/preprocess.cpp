#include "rano/preprocess.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "rano/nifti.hpp"

namespace fs = std::filesystem;

namespace rano::prep {

// ---------------------------------------------------------------------------
// reorient
// ---------------------------------------------------------------------------

VolumeGrid reorient(const VolumeGrid& v) {
  if (!v.has_orientation) throw Error("reorient: volume has no orientation metadata");
  if (v.orientation.is_ras()) return v;

  // world axis and direction of each input array axis
  int world_axis[3];
  int sign[3];
  for (int j = 0; j < 3; ++j) {
    switch (v.orientation.codes[j]) {
      case 'R': world_axis[j] = 0; sign[j] = 1; break;
      case 'L': world_axis[j] = 0; sign[j] = -1; break;
      case 'A': world_axis[j] = 1; sign[j] = 1; break;
      case 'P': world_axis[j] = 1; sign[j] = -1; break;
      case 'S': world_axis[j] = 2; sign[j] = 1; break;
      default:  world_axis[j] = 2; sign[j] = -1; break;
    }
  }

  VolumeGrid out;
  out.orientation = Orientation::ras();
  out.has_orientation = true;
  out.space = v.space;
  for (int j = 0; j < 3; ++j) {
    out.dims[world_axis[j]] = v.dims[j];
    out.spacing[world_axis[j]] = v.spacing[j];
  }
  out.voxels.resize(static_cast<size_t>(out.size()));

  std::array<int64_t, 3> idx;
  for (idx[2] = 0; idx[2] < v.dims[2]; ++idx[2]) {
    for (idx[1] = 0; idx[1] < v.dims[1]; ++idx[1]) {
      for (idx[0] = 0; idx[0] < v.dims[0]; ++idx[0]) {
        std::array<int64_t, 3> o;
        for (int j = 0; j < 3; ++j) {
          o[world_axis[j]] = sign[j] > 0 ? idx[j] : v.dims[j] - 1 - idx[j];
        }
        out.at(o[0], o[1], o[2]) = v.at(idx[0], idx[1], idx[2]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// separable Gaussian smoothing
// ---------------------------------------------------------------------------

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& x : k) x /= sum;
  return k;
}

// Border-renormalized separable blur; sigma given per axis in voxels.
void blur_axis(std::vector<float>& data, std::array<int64_t, 3> dims, int axis, double sigma) {
  if (sigma <= 0) return;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int64_t stride[3] = {1, dims[0], dims[0] * dims[1]};
  const int64_t len = dims[axis];
  const int64_t s = stride[axis];

  const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  std::vector<float> line(static_cast<size_t>(len));
  for (int64_t j = 0; j < dims[a1]; ++j) {
    for (int64_t k = 0; k < dims[a2]; ++k) {
      const int64_t base = j * stride[a1] + k * stride[a2];
      for (int64_t i = 0; i < len; ++i) line[i] = data[base + i * s];
      for (int64_t i = 0; i < len; ++i) {
        double acc = 0.0, wsum = 0.0;
        const int64_t lo = std::max<int64_t>(0, i - radius);
        const int64_t hi = std::min<int64_t>(len - 1, i + radius);
        for (int64_t t = lo; t <= hi; ++t) {
          const double w = kernel[t - i + radius];
          acc += w * line[t];
          wsum += w;
        }
        data[base + i * s] = static_cast<float>(acc / wsum);
      }
    }
  }
}

void blur3(std::vector<float>& data, std::array<int64_t, 3> dims, std::array<double, 3> sigma) {
  for (int a = 0; a < 3; ++a) blur_axis(data, dims, a, sigma[a]);
}

}  // namespace

// ---------------------------------------------------------------------------
// correct_bias
// ---------------------------------------------------------------------------

VolumeGrid correct_bias(const VolumeGrid& v, const BiasOptions& opts) {
  const size_t n = v.voxels.size();
  bool any = false;
  for (float x : v.voxels) {
    if (x < 0) throw Error("correct_bias: negative intensities");
    if (x > 0) any = true;
  }
  if (!any) {
    log::warn("correct_bias: all-zero volume returned unchanged");
    return v;
  }

  std::vector<float> mask(n), logv(n, 0.f);
  for (size_t i = 0; i < n; ++i) {
    mask[i] = v.voxels[i] > 0 ? 1.f : 0.f;
    if (mask[i] > 0) logv[i] = std::log(v.voxels[i]);
  }

  double extent = 0.0;
  for (int a = 0; a < 3; ++a) {
    extent = std::max(extent, v.spacing[a] * static_cast<double>(v.dims[a]));
  }

  for (int it = 0; it < opts.iterations; ++it) {
    const double sigma_mm = std::max(1e-6, extent * opts.sigma_scale / (1 << it));
    std::array<double, 3> sigma;
    for (int a = 0; a < 3; ++a) sigma[a] = sigma_mm / v.spacing[a];

    // normalized convolution restricted to the support mask
    std::vector<float> num(n), den = mask;
    for (size_t i = 0; i < n; ++i) num[i] = logv[i] * mask[i];
    blur3(num, v.dims, sigma);
    blur3(den, v.dims, sigma);

    double mean_field = 0.0;
    int64_t count = 0;
    std::vector<float> field(n, 0.f);
    for (size_t i = 0; i < n; ++i) {
      if (mask[i] > 0 && den[i] > 1e-12f) {
        field[i] = num[i] / den[i];
        mean_field += field[i];
        ++count;
      }
    }
    mean_field /= std::max<int64_t>(1, count);
    for (size_t i = 0; i < n; ++i) {
      if (mask[i] > 0) logv[i] -= field[i] - static_cast<float>(mean_field);
    }
  }

  VolumeGrid out = v;
  for (size_t i = 0; i < n; ++i) {
    out.voxels[i] = mask[i] > 0 ? std::exp(logv[i]) : 0.f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// denoise
// ---------------------------------------------------------------------------

VolumeGrid denoise(const VolumeGrid& v, const DenoiseOptions& opts) {
  VolumeGrid out = v;
  blur3(out.voxels, v.dims, {opts.sigma_voxels, opts.sigma_voxels, opts.sigma_voxels});
  return out;
}

// ---------------------------------------------------------------------------
// znormalize / subtract
// ---------------------------------------------------------------------------

VolumeGrid znormalize(const VolumeGrid& v) {
  double sum = 0.0, sum2 = 0.0;
  int64_t count = 0;
  for (float x : v.voxels) {
    if (x != 0.f) {
      sum += x;
      sum2 += static_cast<double>(x) * x;
      ++count;
    }
  }
  if (count == 0) throw Error("znormalize: empty support (all voxels are zero)");
  const double mean = sum / static_cast<double>(count);
  const double var = sum2 / static_cast<double>(count) - mean * mean;
  if (var <= 1e-12) throw Error("znormalize: constant volume has no defined z-score");
  const double inv_std = 1.0 / std::sqrt(var);

  VolumeGrid out = v;
  for (auto& x : out.voxels) {
    if (x != 0.f) x = static_cast<float>((x - mean) * inv_std);
  }
  return out;
}

VolumeGrid subtract(const VolumeGrid& curr, const VolumeGrid& prev) {
  if (curr.dims != prev.dims) throw Error("subtract: shape mismatch");
  VolumeGrid out = curr;
  for (size_t i = 0; i < out.voxels.size(); ++i) out.voxels[i] = curr.voxels[i] - prev.voxels[i];
  return out;
}

// ---------------------------------------------------------------------------
// cached pipeline
// ---------------------------------------------------------------------------

PreprocessCache::PreprocessCache(fs::path cache_dir, fs::path template_path, PreprocessOptions opts)
    : dir_(std::move(cache_dir)), opts_(std::move(opts)) {
  fs::create_directories(dir_);
  template_hash_ = hash_file(template_path);
  template_ = reorient(read_nifti(template_path));
  template_.space = SpaceTag::template_space;
}

fs::path PreprocessCache::cache_path(const fs::path& input) const {
  uint64_t key = hash_file(input);
  key = fnv1a(opts_.pipeline_version, key);
  key = fnv1a(&template_hash_, sizeof(template_hash_), key);
  return dir_ / (to_hex(key) + ".nii.gz");
}

VolumeOutcome PreprocessCache::process(const fs::path& input) {
  VolumeOutcome outcome;
  outcome.output = cache_path(input);
  if (fs::exists(outcome.output)) {
    outcome.ok = true;
    outcome.cached = true;
    return outcome;
  }

  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    outcome.steps.push_back({name, std::chrono::duration<double, std::milli>(t1 - t0).count(), ""});
  };

  try {
    VolumeGrid v;
    timed("read", [&] { v = read_nifti(input); });
    timed("reorient", [&] { v = reorient(v); });
    timed("bias", [&] { v = correct_bias(v, opts_.bias); });
    timed("denoise", [&] { v = denoise(v, opts_.denoise); });
    RegistrationResult reg;
    timed("register", [&] { reg = register_to_template(v, template_, opts_.registration); });
    if (!reg.ok) {
      outcome.reason = "registration: " + reg.reason;
      outcome.steps.push_back({"register", 0.0, outcome.reason});
      return outcome;
    }
    timed("znormalize", [&] { v = znormalize(reg.resampled); });
    timed("write", [&] { write_nifti(v, outcome.output); });
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.reason = std::string(e.what()) + " (" + input.string() + ")";
  }
  return outcome;
}

CohortPreprocessReport preprocess_cohort(const std::vector<StudySample>& samples,
                                         PreprocessCache& cache, const fs::path& log_csv) {
  CohortPreprocessReport report;
  std::ofstream log_out;
  if (!log_csv.empty()) {
    log_out.open(log_csv);
    log_out << "volume,step,millis,flag\n";
  }

  for (const auto& sample : samples) {
    if (report.excluded.count(sample.id())) continue;
    for (const TimepointRecord* tp : {&sample.prev, &sample.curr}) {
      for (Modality m : sample.modalities.list()) {
        const auto it = tp->image_paths.find(m);
        if (it == tp->image_paths.end()) {
          report.excluded[sample.id()] = "missing " + to_string(m) + " volume";
          continue;
        }
        const auto& path = it->second;
        if (report.volume_outputs.count(path.string())) continue;
        const auto outcome = cache.process(path);
        report.processed++;
        if (outcome.cached) report.cache_hits++;
        if (log_out.is_open()) {
          for (const auto& s : outcome.steps) {
            log_out << path.string() << "," << s.step << "," << s.millis << "," << s.flag << "\n";
          }
        }
        if (!outcome.ok) {
          report.excluded[sample.id()] = outcome.reason;
          log::warn("sample " + sample.id() + " excluded: " + outcome.reason);
        } else {
          report.volume_outputs[path.string()] = outcome.output;
        }
      }
    }
  }
  return report;
}

}  // namespace rano::prep
