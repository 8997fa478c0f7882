#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmsyn/modality.hpp"
#include "mmsyn/volume.hpp"

namespace mmsyn {

using BinaryVolume = Grid3D<std::uint8_t>;

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

// Per-pixel SSIM with a Gaussian window. Near the border the window is cut to
// the image and its weights renormalized, so the map has the input's shape.
Image2D<double> ssim_map(const Slice2D& a, const Slice2D& b, const SsimParams& params = {});

// Mean of the per-slice SSIM maps over voxels where mask != 0 (every voxel
// when no mask is given). std::nullopt when the mask is empty.
std::optional<double> ssim_volume(const Volume3D& a, const Volume3D& b, const BinaryVolume* mask = nullptr,
                                  const SsimParams& params = {});

// 2|P∩T| / (|P|+|T|) of the binarized label masks; 1.0 when both are empty.
// label must be in {1,2,3}.
double dice(const SegVolume3D& pred, const SegVolume3D& truth, int label);
// Same for arbitrary binary masks (nonzero = inside).
double dice_binary(const BinaryVolume& pred, const BinaryVolume& truth);
// Dice of (pred > 0) vs (truth > 0).
double dice_tumor_union(const SegVolume3D& pred, const SegVolume3D& truth);

// Foreground-normalized intensities mapped from [-1, 1] to [0, 1].
Volume3D to_unit_range(const Volume3D& raw);

struct RegionMasks {
    BinaryVolume foreground;  // nonzero voxels of the raw real target
    BinaryVolume tumor;       // label > 0, dilated by one voxel in-plane, inside foreground
    BinaryVolume healthy;     // foreground minus tumor
};

RegionMasks region_masks(const Volume3D& real_raw, const SegVolume3D* truth);

struct SubjectScores {
    std::string subject_id;
    std::optional<double> full_ssim;
    std::optional<double> tumor_ssim;
    std::optional<double> healthy_ssim;
    std::array<std::optional<double>, 3> dice{};  // labels 1 (NCR), 2 (ED), 3 (ET)

    std::optional<double> mean_dice() const;
};

// real_raw: the real target in scanner units; synthetic: [0, 1] convention.
SubjectScores evaluate_subject(const Volume3D& real_raw, const Volume3D& synthetic, const SegVolume3D* truth,
                               const SegVolume3D* predicted, const SsimParams& params = {});

struct ScenarioReport {
    Modality target = Modality::FLAIR;
    std::vector<SubjectScores> subjects;
};

// One row of the summary table. The final row is labelled "Average".
struct ReportRow {
    std::string label;
    std::size_t subjects = 0;
    std::optional<double> full_ssim;
    std::optional<double> tumor_ssim;
    std::optional<double> healthy_ssim;
    std::optional<double> dice;
    // Average row only: unweighted mean of the per-scenario full-SSIM means.
    std::optional<double> scenario_mean_full_ssim;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

// Rows in table order (T2, FLAIR, T1-ce, T1, for the scenarios present),
// then the Average row pooled per subject.
std::vector<ReportRow> summarize(const std::vector<ScenarioReport>& reports);

// Table cell text: four decimals, decimal ties rounded away from zero; "-" when absent.
std::string format_score(const std::optional<double>& v);

// Writes `<prefix>.txt` (aligned table, 4 decimals) and `<prefix>.jsonl`
// (one record per row plus one per subject, full precision).
void emit_report(const std::vector<ScenarioReport>& reports, const std::filesystem::path& prefix);
std::vector<ReportRow> read_report_rows(const std::filesystem::path& jsonl_path);

}  // namespace mmsyn
