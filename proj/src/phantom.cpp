#include "mmsyn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mmsyn/dataio.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/nifti.hpp"

namespace mmsyn {
namespace {

enum Tissue { kCSF, kGM, kWM, kNCR, kET, kED, kTissueCount };

// Relative tissue intensities per modality (canonical order), loosely
// following clinical contrast: T1 dark CSF, T1CE bright enhancing rim,
// T2 bright fluid, FLAIR suppressed CSF with bright edema.
constexpr double kContrast[4][kTissueCount] = {
    // CSF   GM    WM    NCR   ET    ED
    {0.20, 0.55, 0.80, 0.25, 0.45, 0.40},  // T1
    {0.20, 0.55, 0.80, 0.15, 1.00, 0.45},  // T1CE
    {1.00, 0.60, 0.40, 0.90, 0.55, 0.85},  // T2
    {0.10, 0.55, 0.45, 0.45, 0.70, 1.00},  // FLAIR
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double coord(std::int64_t i, std::int64_t n) { return (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n) - 1.0; }

}  // namespace

PhantomSubject make_phantom_subject(std::int64_t hw, std::int64_t depth, std::uint64_t seed,
                                    const std::string& subject_id) {
    if (hw < 16) throw DataError("phantom in-plane size must be at least 16, got " + std::to_string(hw));
    if (depth < 1) throw DataError("phantom depth must be at least 1");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    const double bx = 0.03 * u(rng), by = 0.03 * u(rng);
    const double brx = 0.80 * (1.0 + 0.05 * u(rng)), bry = 0.88 * (1.0 + 0.05 * u(rng)), brz = 1.3;
    const double wm_scale = 0.62 + 0.04 * u(rng);
    const double wobble_phase = 3.14159 * u(rng);
    const double wobble_amp = 0.08 + 0.03 * u(rng);
    const double vent_dx = 0.11 + 0.02 * u(rng);

    // Tumor centre sits on a voxel centre so the innermost shell is never empty.
    auto voxel_near = [](double target, std::int64_t n) {
        auto idx = static_cast<std::int64_t>(std::floor((target + 1.0) * static_cast<double>(n) / 2.0));
        return std::clamp<std::int64_t>(idx, 0, n - 1);
    };
    const double ang = 3.14159 * u(rng);
    const double off = 0.22 + 0.1 * std::abs(u(rng));
    const std::int64_t ti = voxel_near(bx + off * std::cos(ang), hw);
    const std::int64_t tj = voxel_near(by + off * std::sin(ang), hw);
    const std::int64_t tk = voxel_near(0.15 * u(rng), depth);
    const double tx = coord(ti, hw), ty = coord(tj, hw), tz = coord(tk, depth);
    const double tr = 0.28 + 0.05 * std::abs(u(rng));
    const double trz = 0.75;

    std::array<double, 4> gain{};
    for (auto& g : gain) g = 1000.0 * (1.0 + 0.2 * u(rng));

    const double edge = 2.0 / static_cast<double>(hw);  // ~one voxel transition width

    PhantomSubject out;
    out.subject_id = subject_id;
    out.mask = SegVolume3D(hw, hw, depth);
    out.mask.subject_id = subject_id;
    for (std::size_t m = 0; m < 4; ++m) {
        out.modalities[m] = Volume3D(hw, hw, depth);
        out.modalities[m].subject_id = subject_id;
        out.modalities[m].modality = kAllModalities[m];
    }

    for (std::int64_t k = 0; k < depth; ++k) {
        const double z = depth == 1 ? 0.0 : coord(k, depth);
        for (std::int64_t j = 0; j < hw; ++j) {
            const double y = coord(j, hw);
            for (std::int64_t i = 0; i < hw; ++i) {
                const double x = coord(i, hw);
                const double dx = (x - bx) / brx, dy = (y - by) / bry, dz = z / brz;
                const double rb = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (rb >= 1.0) continue;  // skull-stripped background stays exactly zero

                const double theta = std::atan2(dy, dx);
                const double wm_r = wm_scale * (1.0 + wobble_amp * std::sin(3.0 * theta + wobble_phase));
                const double wm = sigmoid((wm_r - rb) / (0.5 * edge));
                const double rim = sigmoid((rb - 0.93) / (0.5 * edge));
                double vent = 0.0;
                for (double side : {-1.0, 1.0}) {
                    const double vx = (x - bx - side * vent_dx) / 0.07, vy = (y - by + 0.05) / 0.22, vz = z / 0.6;
                    const double rv = std::sqrt(vx * vx + vy * vy + vz * vz);
                    vent = std::max(vent, sigmoid((1.0 - rv) / (edge / 0.07)));
                }
                const double csf = std::max(rim, vent);

                const double ex = (x - tx) / tr, ey = (y - ty) / tr, ez = (z - tz) / trz;
                const double rt = std::sqrt(ex * ex + ey * ey + ez * ez);
                const double ed = sigmoid((1.0 - rt) / (edge / tr));
                const double et = sigmoid((0.65 - rt) / (edge / tr));
                const double ncr = sigmoid((0.35 - rt) / (edge / tr));

                std::uint8_t label = 0;
                if (rt < 0.35) label = 1;
                else if (rt < 0.65) label = 3;
                else if (rt < 1.0) label = 2;
                out.mask.at(i, j, k) = label;

                for (std::size_t m = 0; m < 4; ++m) {
                    const auto& c = kContrast[m];
                    const double healthy = (1.0 - csf) * (wm * c[kWM] + (1.0 - wm) * c[kGM]) + csf * c[kCSF];
                    const double lesion = (1.0 - et) * c[kED] + et * ((1.0 - ncr) * c[kET] + ncr * c[kNCR]);
                    const double value = (1.0 - ed) * healthy + ed * lesion;
                    out.modalities[m].at(i, j, k) = static_cast<float>(gain[m] * value);
                }
            }
        }
    }
    return out;
}

std::vector<std::filesystem::path> make_phantom_dataset(const std::filesystem::path& dir, int n_subjects,
                                                        std::int64_t hw, std::int64_t depth,
                                                        std::uint64_t rng_seed) {
    if (n_subjects < 1) throw DataError("phantom dataset needs at least one subject");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create phantom directory " + dir.string() + ": " + ec.message());

    std::seed_seq seq{static_cast<std::uint32_t>(rng_seed), static_cast<std::uint32_t>(rng_seed >> 32)};
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_subjects));
    std::mt19937_64 master(seq);
    for (auto& s : seeds) s = master();

    std::vector<std::filesystem::path> dirs;
    for (int n = 0; n < n_subjects; ++n) {
        char name[32];
        std::snprintf(name, sizeof(name), "phantom-%03d", n);
        const PhantomSubject subject = make_phantom_subject(hw, depth, seeds[static_cast<std::size_t>(n)], name);
        const auto subject_dir = dir / name;
        for (std::size_t m = 0; m < 4; ++m)
            nifti::write_volume(subject.modalities[m], modality_path(subject_dir, name, kAllModalities[m]));
        nifti::write_segmentation(subject.mask, segmentation_path(subject_dir, name));
        dirs.push_back(subject_dir);
    }
    return dirs;
}

}  // namespace mmsyn
