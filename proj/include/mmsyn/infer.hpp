#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "mmsyn/training.hpp"
#include "mmsyn/volume.hpp"

namespace mmsyn {

struct Provenance {
    std::string scenario;
    std::string fingerprint;  // architecture fingerprint of the checkpoint
    std::string checkpoint;   // path, when known
};

struct SynthesisResult {
    Volume3D volume;         // synthesized target, intensities in [0, 1]
    SegVolume3D seg_volume;  // per-voxel argmax of the segmentation head
    Provenance provenance;
};

// Slice-wise synthesis: every source volume is foreground-normalized, slice k
// of the output depends only on source slices k, and the slices are stacked in
// order. Sources must match model.scenario.sources in order and share a shape.
// Throws DataError on a mismatch.
SynthesisResult synthesize_volume(ScenarioModel& model, const std::array<Volume3D, 3>& sources,
                                  std::int64_t slices_per_batch = 8);

// `<subject>_<TARGET>-syn.nii.gz`, `<subject>_seg-syn.nii.gz` and the
// provenance sidecar `<subject>_<TARGET>-syn.json`.
std::filesystem::path synthesized_path(const std::filesystem::path& dir, const std::string& subject, Modality target);
std::filesystem::path synthesized_seg_path(const std::filesystem::path& dir, const std::string& subject);

void write_result(const SynthesisResult& result, const std::filesystem::path& out_dir);

}  // namespace mmsyn
