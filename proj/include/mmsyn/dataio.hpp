#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "mmsyn/modality.hpp"
#include "mmsyn/volume.hpp"

namespace mmsyn {

// Foreground min/max of one raw volume, recorded so intensities can be mapped back.
struct NormalizationStats {
    float min = 0.0f;
    float max = 0.0f;
};

// Maps the nonzero foreground to [-1, 1] by per-volume min-max. Exact-zero
// (skull-stripped) voxels become -1. A constant foreground maps to 0.
Volume3D normalize_volume(const Volume3D& v, NormalizationStats* stats = nullptr);

// Exactly depth() slices; slice k holds voxels[:, :, k].
std::vector<Slice2D> slice_axial(const Volume3D& v);
std::vector<LabelSlice2D> slice_axial(const SegVolume3D& s);
// Inverse of slice_axial. All slices must share one shape.
Volume3D stack_axial(const std::vector<Slice2D>& slices);
SegVolume3D stack_axial(const std::vector<LabelSlice2D>& slices);

bool has_nonzero_label(const SegVolume3D& s, std::int64_t k);

// Conventional on-disk layout: `<dir>/<subject>/<subject>_<TAG>.nii.gz`.
std::filesystem::path modality_path(const std::filesystem::path& subject_dir, const std::string& subject,
                                    Modality m);
std::filesystem::path segmentation_path(const std::filesystem::path& subject_dir, const std::string& subject);

struct SubjectFiles {
    std::string subject_id;
    std::array<std::filesystem::path, 4> modalities;  // canonical order
    std::filesystem::path segmentation;
};

struct ManifestEntry {
    std::string subject_id;
    std::int64_t slice_index = 0;
    bool has_tumor = false;
    std::size_t subject = 0;  // index into DatasetManifest::subjects
};

struct ManifestWarning {
    std::string subject_id;
    std::string message;
};

struct DatasetManifest {
    std::vector<SubjectFiles> subjects;
    std::vector<ManifestEntry> entries;
    // subject_id -> per-modality foreground stats (canonical order).
    std::map<std::string, std::array<NormalizationStats, 4>> normalization;
    std::vector<ManifestWarning> warnings;

    std::size_t tumor_count() const;
    std::vector<std::size_t> tumor_entries() const;
};

// Appends one entry per axial slice of `mask`, flagging slices with any nonzero label.
void append_subject(DatasetManifest& manifest, SubjectFiles files, const SegVolume3D& mask);

// Scans subject directories in sorted order. Subjects lacking any modality or
// the segmentation are skipped and recorded in `warnings`.
DatasetManifest build_manifest(const std::filesystem::path& root);

// Line-delimited JSON, one record per slice entry; normalization stats are
// written to `<path>.stats.json`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Aligned slices of all four modalities plus the mask for one subject/slice.
struct MultiModalSample {
    std::array<Slice2D, 4> images;  // canonical order, normalized to [-1, 1]
    LabelSlice2D mask;
    std::string subject_id;
    std::int64_t slice_index = 0;

    const Slice2D& image(Modality m) const { return images[static_cast<std::size_t>(index_of(m))]; }
};

// Uniform draw of `batch_size` distinct tumor entries (indices into
// manifest.entries), reproducible under `rng_seed`.
std::vector<std::size_t> draw_tumor_batch(const DatasetManifest& manifest, std::size_t batch_size,
                                          std::uint64_t rng_seed);

// Seeded permutation of tumor entries split into consecutive batches; the
// final batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                                    std::uint64_t rng_seed);

// Loads subjects lazily and keeps their normalized volumes in memory.
class SliceDataset {
public:
    explicit SliceDataset(DatasetManifest manifest);

    const DatasetManifest& manifest() const { return manifest_; }
    MultiModalSample sample(std::size_t entry_index);
    std::vector<MultiModalSample> samples(const std::vector<std::size_t>& entry_indices);

private:
    struct LoadedSubject {
        std::array<Volume3D, 4> images;
        SegVolume3D mask;
    };
    const LoadedSubject& subject(std::size_t index);

    DatasetManifest manifest_;
    std::map<std::size_t, LoadedSubject> cache_;
    std::mutex mutex_;
};

std::vector<MultiModalSample> sample_batch(SliceDataset& dataset, const MissingScenario& scenario,
                                           std::size_t batch_size, std::uint64_t rng_seed);

}  // namespace mmsyn
