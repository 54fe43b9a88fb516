#pragma once

#include <filesystem>

#include "rano/volume.hpp"

namespace rano {

/// Reads a NIfTI-1 volume (.nii or .nii.gz; 4D files with a single frame are
/// accepted). Scalar data is converted to float and scl_slope/scl_inter are
/// applied. Orientation is taken from the sform, falling back to the qform.
VolumeGrid read_nifti(const std::filesystem::path& path);

/// Writes float32 NIfTI-1, gzip-compressed when the extension is .gz.
/// The sform encodes the grid's orientation and spacing with origin 0.
void write_nifti(const VolumeGrid& v, const std::filesystem::path& path);

}  // namespace rano
