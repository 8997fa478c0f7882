#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmsyn/volume.hpp"

namespace mmsyn {

struct PhantomSubject {
    std::string subject_id;
    std::array<Volume3D, 4> modalities;  // canonical order, raw scanner-like units
    SegVolume3D mask;
};

// Synthetic brain: an ellipsoidal head with white matter, grey matter and
// ventricles, plus a nested-shell tumor (NCR core, ET rim, ED halo). Every
// modality is a fixed tissue-contrast table applied to the same soft tissue
// memberships, so each target is a deterministic function of the sources.
PhantomSubject make_phantom_subject(std::int64_t hw, std::int64_t depth, std::uint64_t seed,
                                    const std::string& subject_id);

// Writes `<dir>/<id>/<id>_<TAG>.nii.gz` and `<id>_seg.nii.gz` for n subjects
// named "phantom-000", ... Returns the subject directories.
std::vector<std::filesystem::path> make_phantom_dataset(const std::filesystem::path& dir, int n_subjects,
                                                        std::int64_t hw, std::int64_t depth,
                                                        std::uint64_t rng_seed);

}  // namespace mmsyn
