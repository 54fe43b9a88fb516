#include "rano/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

namespace rano {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code;
  int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum : int16_t {
  kDtUint8 = 2,
  kDtInt16 = 4,
  kDtInt32 = 8,
  kDtFloat32 = 16,
  kDtFloat64 = 64,
  kDtUint16 = 512,
};

struct GzReader {
  gzFile f = nullptr;
  explicit GzReader(const std::filesystem::path& p) {
    f = gzopen(p.string().c_str(), "rb");  // transparently reads plain files too
  }
  ~GzReader() {
    if (f) gzclose(f);
  }
  void read_exact(void* dst, size_t n, const std::filesystem::path& p) {
    if (gzread(f, dst, static_cast<unsigned>(n)) != static_cast<int>(n)) {
      throw Error("truncated NIfTI file: " + p.string());
    }
  }
};

// Quaternion-based rotation per the NIfTI qform convention (method 2).
void qform_to_matrix(const Nifti1Header& h, double r[3][3]) {
  const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a2 = 1.0 - (b * b + c * c + d * d);
  const double a = a2 > 0 ? std::sqrt(a2) : 0.0;
  const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
  r[0][0] = a * a + b * b - c * c - d * d;
  r[0][1] = 2 * b * c - 2 * a * d;
  r[0][2] = (2 * b * d + 2 * a * c) * qfac;
  r[1][0] = 2 * b * c + 2 * a * d;
  r[1][1] = a * a + c * c - b * b - d * d;
  r[1][2] = (2 * c * d - 2 * a * b) * qfac;
  r[2][0] = 2 * b * d - 2 * a * c;
  r[2][1] = 2 * c * d + 2 * a * b;
  r[2][2] = (a * a + d * d - c * c - b * b) * qfac;
}

Orientation orientation_from_matrix(const double r[3][3]) {
  // Nearest-axis code per voxel axis; exact for axis-aligned affines.
  static const char kPos[3] = {'R', 'A', 'S'};
  static const char kNeg[3] = {'L', 'P', 'I'};
  Orientation o;
  bool used[3] = {false, false, false};
  for (int j = 0; j < 3; ++j) {
    int best = -1;
    double best_abs = -1.0;
    for (int i = 0; i < 3; ++i) {
      if (used[i]) continue;
      const double v = std::fabs(r[i][j]);
      if (v > best_abs) {
        best_abs = v;
        best = i;
      }
    }
    used[best] = true;
    o.codes[j] = r[best][j] >= 0 ? kPos[best] : kNeg[best];
  }
  return o;
}

}  // namespace

VolumeGrid read_nifti(const std::filesystem::path& path) {
  GzReader in(path);
  if (!in.f) throw Error("cannot open NIfTI file: " + path.string());

  Nifti1Header h{};
  in.read_exact(&h, sizeof(h), path);
  if (h.sizeof_hdr != 348) {
    throw Error("unsupported NIfTI header (wrong size or byte order): " + path.string());
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0 && std::memcmp(h.magic, "ni1", 3) != 0) {
    throw Error("not a NIfTI-1 file: " + path.string());
  }
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw Error("expected a 3D NIfTI volume: " + path.string());
  for (int d = 4; d <= ndim; ++d) {
    if (h.dim[d] > 1) throw Error("multi-frame NIfTI not supported: " + path.string());
  }

  VolumeGrid v;
  v.dims = {h.dim[1], h.dim[2], h.dim[3]};
  for (int a = 0; a < 3; ++a) v.spacing[a] = std::fabs(h.pixdim[a + 1]);

  if (h.sform_code > 0) {
    double r[3][3] = {{h.srow_x[0], h.srow_x[1], h.srow_x[2]},
                      {h.srow_y[0], h.srow_y[1], h.srow_y[2]},
                      {h.srow_z[0], h.srow_z[1], h.srow_z[2]}};
    v.orientation = orientation_from_matrix(r);
    v.has_orientation = true;
  } else if (h.qform_code > 0) {
    double r[3][3];
    qform_to_matrix(h, r);
    v.orientation = orientation_from_matrix(r);
    v.has_orientation = true;
  } else {
    v.has_orientation = false;
  }

  // Skip any extension bytes between the header and vox_offset.
  const long skip = static_cast<long>(h.vox_offset) - static_cast<long>(sizeof(h));
  for (long i = 0; i < skip; ++i) {
    char c;
    in.read_exact(&c, 1, path);
  }

  const size_t n = static_cast<size_t>(v.size());
  v.voxels.resize(n);
  switch (h.datatype) {
    case kDtFloat32: {
      in.read_exact(v.voxels.data(), n * 4, path);
      break;
    }
    case kDtFloat64: {
      std::vector<double> tmp(n);
      in.read_exact(tmp.data(), n * 8, path);
      for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtUint8: {
      std::vector<uint8_t> tmp(n);
      in.read_exact(tmp.data(), n, path);
      for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtInt16: {
      std::vector<int16_t> tmp(n);
      in.read_exact(tmp.data(), n * 2, path);
      for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtUint16: {
      std::vector<uint16_t> tmp(n);
      in.read_exact(tmp.data(), n * 2, path);
      for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtInt32: {
      std::vector<int32_t> tmp(n);
      in.read_exact(tmp.data(), n * 4, path);
      for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(tmp[i]);
      break;
    }
    default:
      throw Error("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path.string());
  }

  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& x : v.voxels) x = x * h.scl_slope + h.scl_inter;
  }
  return v;
}

void write_nifti(const VolumeGrid& v, const std::filesystem::path& path) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(v.dims[0]);
  h.dim[2] = static_cast<int16_t>(v.dims[1]);
  h.dim[3] = static_cast<int16_t>(v.dims[2]);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = kDtFloat32;
  h.bitpix = 32;
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(v.spacing[a]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  std::memcpy(h.magic, "n+1", 4);

  if (v.has_orientation) {
    h.sform_code = 1;
    float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int j = 0; j < 3; ++j) {
      int world_axis;
      double sign;
      switch (v.orientation.codes[j]) {
        case 'R': world_axis = 0; sign = 1; break;
        case 'L': world_axis = 0; sign = -1; break;
        case 'A': world_axis = 1; sign = 1; break;
        case 'P': world_axis = 1; sign = -1; break;
        case 'S': world_axis = 2; sign = 1; break;
        default:  world_axis = 2; sign = -1; break;
      }
      rows[world_axis][j] = static_cast<float>(sign * v.spacing[j]);
    }
  }

  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.string().c_str(), gz ? "wb" : "wbT");
  if (!f) throw Error("cannot open NIfTI file for writing: " + path.string());
  const char pad[4] = {0, 0, 0, 0};
  bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
            gzwrite(f, pad, 4) == 4 &&
            gzwrite(f, v.voxels.data(), static_cast<unsigned>(v.voxels.size() * 4)) ==
                static_cast<int>(v.voxels.size() * 4);
  gzclose(f);
  if (!ok) throw Error("failed writing NIfTI file: " + path.string());
}

}  // namespace rano
