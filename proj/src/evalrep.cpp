#include "mmsyn/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmsyn/dataio.hpp"
#include "mmsyn/errors.hpp"

namespace mmsyn {
namespace {

using nlohmann::json;

// Normalized 1D weights for every output position along an axis of length n.
// weights[p * window + t] applies to input p + t - radius.
std::vector<double> axis_weights(std::int64_t n, const SsimParams& params) {
    const int radius = params.window / 2;
    std::vector<double> g(static_cast<std::size_t>(params.window));
    for (int t = 0; t < params.window; ++t) {
        const double d = t - radius;
        g[static_cast<std::size_t>(t)] = std::exp(-d * d / (2.0 * params.sigma * params.sigma));
    }
    std::vector<double> w(static_cast<std::size_t>(n * params.window), 0.0);
    for (std::int64_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (int t = 0; t < params.window; ++t) {
            const auto q = p + t - radius;
            if (q >= 0 && q < n) sum += g[static_cast<std::size_t>(t)];
        }
        for (int t = 0; t < params.window; ++t) {
            const auto q = p + t - radius;
            if (q >= 0 && q < n) w[static_cast<std::size_t>(p * params.window + t)] = g[static_cast<std::size_t>(t)] / sum;
        }
    }
    return w;
}

// Separable windowed mean of a rows x cols plane stored row-major.
void window_mean(const std::vector<double>& x, std::int64_t rows, std::int64_t cols, const std::vector<double>& wr,
                 const std::vector<double>& wc, int window, std::vector<double>& tmp, std::vector<double>& out) {
    const int radius = window / 2;
    tmp.assign(x.size(), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < window; ++t) {
                const auto q = c + t - radius;
                if (q >= 0 && q < cols) acc += wc[static_cast<std::size_t>(c * window + t)] * x[static_cast<std::size_t>(r * cols + q)];
            }
            tmp[static_cast<std::size_t>(r * cols + c)] = acc;
        }
    }
    out.assign(x.size(), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < window; ++t) {
                const auto q = r + t - radius;
                if (q >= 0 && q < rows) acc += wr[static_cast<std::size_t>(r * window + t)] * tmp[static_cast<std::size_t>(q * cols + c)];
            }
            out[static_cast<std::size_t>(r * cols + c)] = acc;
        }
    }
}

std::vector<double> ssim_plane(std::span<const float> a, std::span<const float> b, std::int64_t rows, std::int64_t cols,
                               const SsimParams& params) {
    if (params.window < 1 || params.window % 2 == 0) throw std::invalid_argument("SSIM window must be odd");
    const auto n = static_cast<std::size_t>(rows * cols);
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a[i];
        y[i] = b[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto wr = axis_weights(rows, params);
    const auto wc = axis_weights(cols, params);
    std::vector<double> tmp, mx, my, mxx, myy, mxy;
    window_mean(x, rows, cols, wr, wc, params.window, tmp, mx);
    window_mean(y, rows, cols, wr, wc, params.window, tmp, my);
    window_mean(xx, rows, cols, wr, wc, params.window, tmp, mxx);
    window_mean(yy, rows, cols, wr, wc, params.window, tmp, myy);
    window_mean(xy, rows, cols, wr, wc, params.window, tmp, mxy);

    const double c1 = std::pow(params.k1 * params.data_range, 2);
    const double c2 = std::pow(params.k2 * params.data_range, 2);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        out[i] = ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return out;
}

template <typename A, typename B>
void require_same_dims(const A& a, const B& b, const char* what) {
    if (a.dims != b.dims) throw std::invalid_argument(std::string(what) + ": volume shapes differ");
}

}  // namespace

Image2D<double> ssim_map(const Slice2D& a, const Slice2D& b, const SsimParams& params) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("ssim_map: image shapes differ");
    Image2D<double> out(a.height, a.width);
    out.data = ssim_plane(a.data, b.data, a.height, a.width, params);
    return out;
}

std::optional<double> ssim_volume(const Volume3D& a, const Volume3D& b, const BinaryVolume* mask, const SsimParams& params) {
    require_same_dims(a, b, "ssim_volume");
    if (mask) require_same_dims(a, *mask, "ssim_volume mask");
    // A NIfTI-order plane is a row-major [W][H] image; the isotropic window
    // makes the SSIM map simply its transpose, so no copy is needed.
    double sum = 0.0;
    std::size_t count = 0;
    for (std::int64_t k = 0; k < a.depth(); ++k) {
        const auto plane_mask = mask ? mask->axial_plane(k) : std::span<const std::uint8_t>{};
        if (mask && std::none_of(plane_mask.begin(), plane_mask.end(), [](std::uint8_t v) { return v != 0; })) continue;
        const auto map = ssim_plane(a.axial_plane(k), b.axial_plane(k), a.width(), a.height(), params);
        for (std::size_t i = 0; i < map.size(); ++i) {
            if (mask && plane_mask[i] == 0) continue;
            sum += map[i];
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

double dice_binary(const BinaryVolume& pred, const BinaryVolume& truth) {
    require_same_dims(pred, truth, "dice");
    std::size_t p = 0, t = 0, both = 0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        const bool a = pred.voxels[i] != 0, b = truth.voxels[i] != 0;
        p += a;
        t += b;
        both += a && b;
    }
    if (p + t == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

namespace {

BinaryVolume binarize(const SegVolume3D& s, int label) {
    BinaryVolume out(s.height(), s.width(), s.depth());
    for (std::size_t i = 0; i < s.voxels.size(); ++i)
        out.voxels[i] = label == 0 ? s.voxels[i] != 0 : s.voxels[i] == label;
    return out;
}

}  // namespace

double dice(const SegVolume3D& pred, const SegVolume3D& truth, int label) {
    if (label < 1 || label > 3) throw std::invalid_argument("dice: label must be 1, 2 or 3, got " + std::to_string(label));
    return dice_binary(binarize(pred, label), binarize(truth, label));
}

double dice_tumor_union(const SegVolume3D& pred, const SegVolume3D& truth) {
    return dice_binary(binarize(pred, 0), binarize(truth, 0));
}

Volume3D to_unit_range(const Volume3D& raw) {
    Volume3D v = normalize_volume(raw);
    for (float& x : v.voxels) x = 0.5f * (x + 1.0f);
    return v;
}

RegionMasks region_masks(const Volume3D& real_raw, const SegVolume3D* truth) {
    const auto h = real_raw.height(), w = real_raw.width(), d = real_raw.depth();
    RegionMasks m{BinaryVolume(h, w, d), BinaryVolume(h, w, d), BinaryVolume(h, w, d)};
    for (std::size_t i = 0; i < real_raw.voxels.size(); ++i) m.foreground.voxels[i] = real_raw.voxels[i] != 0.0f;
    if (truth) {
        require_same_dims(real_raw, *truth, "region_masks");
        for (std::int64_t k = 0; k < d; ++k)
            for (std::int64_t j = 0; j < w; ++j)
                for (std::int64_t i = 0; i < h; ++i) {
                    if (truth->at(i, j, k) == 0) continue;
                    for (std::int64_t dj = -1; dj <= 1; ++dj)
                        for (std::int64_t di = -1; di <= 1; ++di) {
                            const auto ii = i + di, jj = j + dj;
                            if (ii >= 0 && ii < h && jj >= 0 && jj < w) m.tumor.at(ii, jj, k) = 1;
                        }
                }
    }
    for (std::size_t i = 0; i < m.foreground.voxels.size(); ++i) {
        m.tumor.voxels[i] = m.tumor.voxels[i] && m.foreground.voxels[i];
        m.healthy.voxels[i] = m.foreground.voxels[i] && !m.tumor.voxels[i];
    }
    return m;
}

std::optional<double> SubjectScores::mean_dice() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& d : dice) {
        if (d) {
            sum += *d;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

SubjectScores evaluate_subject(const Volume3D& real_raw, const Volume3D& synthetic, const SegVolume3D* truth,
                               const SegVolume3D* predicted, const SsimParams& params) {
    require_same_dims(real_raw, synthetic, "evaluate_subject");
    SubjectScores s;
    s.subject_id = real_raw.subject_id;
    const Volume3D real = to_unit_range(real_raw);
    const RegionMasks masks = region_masks(real_raw, truth);
    s.full_ssim = ssim_volume(real, synthetic, &masks.foreground, params);
    if (truth) {
        s.tumor_ssim = ssim_volume(real, synthetic, &masks.tumor, params);
        s.healthy_ssim = ssim_volume(real, synthetic, &masks.healthy, params);
        if (predicted) {
            for (int label = 1; label <= 3; ++label) s.dice[static_cast<std::size_t>(label - 1)] = dice(*predicted, *truth, label);
        }
    }
    return s;
}

namespace {

constexpr Modality kTableOrder[] = {Modality::T2, Modality::FLAIR, Modality::T1CE, Modality::T1};

struct Accumulator {
    double sum = 0.0;
    std::size_t n = 0;
    void add(const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    std::optional<double> mean() const {
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    }
};

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

// Four decimals, rounded half away from zero after snapping to 1e-8 so that
// decimal ties such as 0.91755 are not decided by binary representation noise.
std::string fmt4(const std::optional<double>& v) {
    if (!v) return "-";
    if (!std::isfinite(*v)) return std::isnan(*v) ? "nan" : (*v > 0 ? "inf" : "-inf");
    const long long scaled = std::llround(std::abs(*v) * 1e8);
    const long long units = (scaled + 5000) / 10000;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%lld.%04lld", (*v < 0 && units != 0) ? "-" : "", units / 10000, units % 10000);
    return buf;
}

}  // namespace

std::string format_score(const std::optional<double>& v) { return fmt4(v); }

std::vector<ReportRow> summarize(const std::vector<ScenarioReport>& reports) {
    std::vector<ReportRow> rows;
    Accumulator all_full, all_tumor, all_healthy, all_dice, scenario_means;
    std::size_t all_subjects = 0;
    for (Modality m : kTableOrder) {
        for (const auto& r : reports) {
            if (r.target != m) continue;
            Accumulator full, tumor, healthy, dsc;
            for (const auto& s : r.subjects) {
                full.add(s.full_ssim);
                tumor.add(s.tumor_ssim);
                healthy.add(s.healthy_ssim);
                dsc.add(s.mean_dice());
                all_full.add(s.full_ssim);
                all_tumor.add(s.tumor_ssim);
                all_healthy.add(s.healthy_ssim);
                all_dice.add(s.mean_dice());
            }
            all_subjects += r.subjects.size();
            scenario_means.add(full.mean());
            rows.push_back({std::string(modality_display(m)), r.subjects.size(), full.mean(), tumor.mean(),
                            healthy.mean(), dsc.mean(), std::nullopt});
        }
    }
    rows.push_back({"Average", all_subjects, all_full.mean(), all_tumor.mean(), all_healthy.mean(), all_dice.mean(),
                    scenario_means.mean()});
    return rows;
}

void emit_report(const std::vector<ScenarioReport>& reports, const std::filesystem::path& prefix) {
    const auto rows = summarize(reports);
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());

    std::ofstream jl(prefix.string() + ".jsonl");
    for (const auto& r : rows) {
        json rec = {{"kind", "row"},
                    {"label", r.label},
                    {"subjects", r.subjects},
                    {"full_ssim", opt_json(r.full_ssim)},
                    {"tumor_ssim", opt_json(r.tumor_ssim)},
                    {"healthy_ssim", opt_json(r.healthy_ssim)},
                    {"dice", opt_json(r.dice)}};
        if (r.label == "Average") rec["scenario_mean_full_ssim"] = opt_json(r.scenario_mean_full_ssim);
        jl << rec.dump() << '\n';
    }
    for (const auto& rep : reports) {
        for (const auto& s : rep.subjects) {
            json dice_json = json::array();
            for (const auto& d : s.dice) dice_json.push_back(opt_json(d));
            jl << json{{"kind", "subject"},
                       {"scenario", std::string(modality_display(rep.target))},
                       {"subject_id", s.subject_id},
                       {"full_ssim", opt_json(s.full_ssim)},
                       {"tumor_ssim", opt_json(s.tumor_ssim)},
                       {"healthy_ssim", opt_json(s.healthy_ssim)},
                       {"dice", dice_json}}
                      .dump()
               << '\n';
        }
    }

    std::ofstream txt(prefix.string() + ".txt");
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %8s %12s %12s %14s %10s\n", "Scenario", "Subjects", "SSIM(full)",
                  "SSIM(tumor)", "SSIM(healthy)", "Dice");
    txt << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-10s %8zu %12s %12s %14s %10s\n", r.label.c_str(), r.subjects,
                      fmt4(r.full_ssim).c_str(), fmt4(r.tumor_ssim).c_str(), fmt4(r.healthy_ssim).c_str(),
                      fmt4(r.dice).c_str());
        txt << line;
    }
    const auto& avg = rows.back();
    txt << "\nAverage row pools subjects across scenarios. Mean of the per-scenario full-SSIM values: "
        << fmt4(avg.scenario_mean_full_ssim) << '\n';
    if (avg.full_ssim && avg.scenario_mean_full_ssim && fmt4(avg.full_ssim) != fmt4(avg.scenario_mean_full_ssim)) {
        txt << "Note: the two averages differ because scenarios contain different numbers of subjects.\n";
    }
    if (!jl || !txt) throw DataError("failed writing report " + prefix.string());
}

std::vector<ReportRow> read_report_rows(const std::filesystem::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw DataError("cannot read report " + jsonl_path.string());
    std::vector<ReportRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.at("kind") != "row") continue;
        ReportRow r;
        r.label = j.at("label").get<std::string>();
        r.subjects = j.at("subjects").get<std::size_t>();
        r.full_ssim = opt_from(j, "full_ssim");
        r.tumor_ssim = opt_from(j, "tumor_ssim");
        r.healthy_ssim = opt_from(j, "healthy_ssim");
        r.dice = opt_from(j, "dice");
        r.scenario_mean_full_ssim = opt_from(j, "scenario_mean_full_ssim");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace mmsyn
