#pragma once

#include <filesystem>

#include "mmsyn/volume.hpp"

namespace mmsyn::nifti {

// Reads a NIfTI-1 scalar image (.nii or .nii.gz). Integer and floating
// datatypes are converted to float with scl_slope/scl_inter applied.
// Throws DataError on a missing file, non-3D image or non-finite voxels.
Volume3D read_volume(const std::filesystem::path& path, Modality modality);

// Labels must be integral and lie in {0,1,2,3}.
SegVolume3D read_segmentation(const std::filesystem::path& path);

// Volumes are stored as float32, segmentations as uint8. Output is gzip
// compressed when the path ends in ".gz"; the stream is byte-reproducible.
void write_volume(const Volume3D& v, const std::filesystem::path& path);
void write_segmentation(const SegVolume3D& s, const std::filesystem::path& path);

}  // namespace mmsyn::nifti
