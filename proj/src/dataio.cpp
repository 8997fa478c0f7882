#include "mmsyn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "mmsyn/errors.hpp"
#include "mmsyn/nifti.hpp"

namespace mmsyn {

using nlohmann::json;
namespace fs = std::filesystem;

Volume3D normalize_volume(const Volume3D& v, NormalizationStats* stats) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float x : v.voxels) {
        if (!std::isfinite(x)) throw DataError("normalize_volume: non-finite voxel in " + v.subject_id);
        if (x == 0.0f) continue;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    Volume3D out = v;
    const bool empty = lo > hi;
    if (stats) *stats = empty ? NormalizationStats{} : NormalizationStats{lo, hi};

    const double range = empty ? 0.0 : static_cast<double>(hi) - static_cast<double>(lo);
    for (float& x : out.voxels) {
        if (x == 0.0f) {
            x = -1.0f;
        } else if (range == 0.0) {
            x = 0.0f;
        } else {
            const double t = 2.0 * (static_cast<double>(x) - lo) / range - 1.0;
            x = static_cast<float>(std::clamp(t, -1.0, 1.0));
        }
    }
    return out;
}

std::vector<Slice2D> slice_axial(const Volume3D& v) {
    std::vector<Slice2D> slices;
    slices.reserve(static_cast<std::size_t>(v.depth()));
    for (std::int64_t k = 0; k < v.depth(); ++k) {
        Slice2D s(v.height(), v.width());
        for (std::int64_t i = 0; i < v.height(); ++i)
            for (std::int64_t j = 0; j < v.width(); ++j) s(i, j) = v.at(i, j, k);
        slices.push_back(std::move(s));
    }
    return slices;
}

std::vector<LabelSlice2D> slice_axial(const SegVolume3D& v) {
    std::vector<LabelSlice2D> slices;
    slices.reserve(static_cast<std::size_t>(v.depth()));
    for (std::int64_t k = 0; k < v.depth(); ++k) {
        LabelSlice2D s(v.height(), v.width());
        for (std::int64_t i = 0; i < v.height(); ++i)
            for (std::int64_t j = 0; j < v.width(); ++j) s(i, j) = v.at(i, j, k);
        slices.push_back(std::move(s));
    }
    return slices;
}

namespace {

template <typename Vol, typename Img>
Vol stack_impl(const std::vector<Img>& slices) {
    if (slices.empty()) throw DataError("stack_axial: no slices");
    const auto h = slices.front().height;
    const auto w = slices.front().width;
    Vol v(h, w, static_cast<std::int64_t>(slices.size()));
    for (std::size_t k = 0; k < slices.size(); ++k) {
        const auto& s = slices[k];
        if (s.height != h || s.width != w) throw DataError("stack_axial: slice shapes differ");
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) v.at(i, j, static_cast<std::int64_t>(k)) = s(i, j);
    }
    return v;
}

}  // namespace

Volume3D stack_axial(const std::vector<Slice2D>& slices) { return stack_impl<Volume3D>(slices); }
SegVolume3D stack_axial(const std::vector<LabelSlice2D>& slices) { return stack_impl<SegVolume3D>(slices); }

bool has_nonzero_label(const SegVolume3D& s, std::int64_t k) {
    const auto plane = s.axial_plane(k);
    return std::any_of(plane.begin(), plane.end(), [](std::uint8_t l) { return l != 0; });
}

fs::path modality_path(const fs::path& subject_dir, const std::string& subject, Modality m) {
    return subject_dir / (subject + "_" + std::string(modality_tag(m)) + ".nii.gz");
}

fs::path segmentation_path(const fs::path& subject_dir, const std::string& subject) {
    return subject_dir / (subject + "_seg.nii.gz");
}

std::size_t DatasetManifest::tumor_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const ManifestEntry& e) { return e.has_tumor; }));
}

std::vector<std::size_t> DatasetManifest::tumor_entries() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].has_tumor) out.push_back(i);
    return out;
}

void append_subject(DatasetManifest& manifest, SubjectFiles files, const SegVolume3D& mask) {
    const std::size_t subject_index = manifest.subjects.size();
    for (std::int64_t k = 0; k < mask.depth(); ++k) {
        manifest.entries.push_back({files.subject_id, k, has_nonzero_label(mask, k), subject_index});
    }
    manifest.subjects.push_back(std::move(files));
}

namespace {

// Accepts both `.nii.gz` and plain `.nii` spellings of the conventional name.
std::optional<fs::path> find_image(const fs::path& gz_path) {
    if (fs::exists(gz_path)) return gz_path;
    fs::path plain = gz_path;
    plain.replace_extension();  // strip ".gz"
    if (fs::exists(plain)) return plain;
    return std::nullopt;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("data root is not a directory: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    DatasetManifest manifest;
    for (const auto& dir : dirs) {
        const std::string subject = dir.filename().string();
        SubjectFiles files;
        files.subject_id = subject;
        std::vector<std::string> missing;
        for (Modality m : kAllModalities) {
            auto p = find_image(modality_path(dir, subject, m));
            if (p) files.modalities[static_cast<std::size_t>(index_of(m))] = *p;
            else missing.emplace_back(modality_tag(m));
        }
        auto seg = find_image(segmentation_path(dir, subject));
        if (seg) files.segmentation = *seg;
        else missing.emplace_back("seg");
        if (!missing.empty()) {
            std::string msg = "missing";
            for (const auto& m : missing) msg += " " + m;
            manifest.warnings.push_back({subject, msg});
            continue;
        }

        const SegVolume3D mask = nifti::read_segmentation(files.segmentation);
        std::array<NormalizationStats, 4> stats{};
        for (Modality m : kAllModalities) {
            const auto idx = static_cast<std::size_t>(index_of(m));
            const Volume3D v = nifti::read_volume(files.modalities[idx], m);
            if (v.dims != mask.dims) {
                throw DataError(subject + ": " + std::string(modality_tag(m)) +
                                " shape differs from the segmentation shape");
            }
            normalize_volume(v, &stats[idx]);
        }
        manifest.normalization[subject] = stats;
        append_subject(manifest, std::move(files), mask);
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    for (const auto& e : manifest.entries) {
        const auto& files = manifest.subjects[e.subject];
        json paths;
        for (Modality m : kAllModalities)
            paths[std::string(modality_tag(m))] = files.modalities[static_cast<std::size_t>(index_of(m))].string();
        paths["seg"] = files.segmentation.string();
        json rec = {{"subject_id", e.subject_id},
                    {"slice_index", e.slice_index},
                    {"has_tumor", e.has_tumor},
                    {"paths", paths}};
        out << rec.dump() << '\n';
    }

    json stats = json::object();
    for (const auto& [subject, per_modality] : manifest.normalization) {
        json s;
        for (Modality m : kAllModalities) {
            const auto& st = per_modality[static_cast<std::size_t>(index_of(m))];
            s[std::string(modality_tag(m))] = {{"min", st.min}, {"max", st.max}};
        }
        stats[subject] = s;
    }
    json warnings = json::array();
    for (const auto& w : manifest.warnings) warnings.push_back({{"subject_id", w.subject_id}, {"message", w.message}});
    std::ofstream sout(fs::path(path.string() + ".stats.json"));
    sout << json{{"normalization", stats}, {"warnings", warnings}}.dump(2) << '\n';
    if (!out || !sout) throw DataError("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest " + path.string());
    DatasetManifest manifest;
    std::map<std::string, std::size_t> subject_index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            const std::string subject = rec.at("subject_id").get<std::string>();
            auto it = subject_index.find(subject);
            if (it == subject_index.end()) {
                SubjectFiles files;
                files.subject_id = subject;
                const auto& paths = rec.at("paths");
                for (Modality m : kAllModalities)
                    files.modalities[static_cast<std::size_t>(index_of(m))] =
                        paths.at(std::string(modality_tag(m))).get<std::string>();
                files.segmentation = paths.at("seg").get<std::string>();
                it = subject_index.emplace(subject, manifest.subjects.size()).first;
                manifest.subjects.push_back(std::move(files));
            }
            manifest.entries.push_back(
                {subject, rec.at("slice_index").get<std::int64_t>(), rec.at("has_tumor").get<bool>(), it->second});
        } catch (const json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest record (" +
                            ex.what() + ")");
        }
    }

    std::ifstream sin(fs::path(path.string() + ".stats.json"));
    if (sin) {
        try {
            const json doc = json::parse(sin);
            for (const auto& [subject, s] : doc.at("normalization").items()) {
                std::array<NormalizationStats, 4> st{};
                for (Modality m : kAllModalities) {
                    const auto& r = s.at(std::string(modality_tag(m)));
                    st[static_cast<std::size_t>(index_of(m))] = {r.at("min").get<float>(), r.at("max").get<float>()};
                }
                manifest.normalization[subject] = st;
            }
            for (const auto& w : doc.at("warnings"))
                manifest.warnings.push_back({w.at("subject_id").get<std::string>(), w.at("message").get<std::string>()});
        } catch (const json::exception& ex) {
            throw DataError("malformed normalization stats for " + path.string() + " (" + ex.what() + ")");
        }
    }
    return manifest;
}

std::vector<std::size_t> draw_tumor_batch(const DatasetManifest& manifest, std::size_t batch_size,
                                          std::uint64_t rng_seed) {
    std::vector<std::size_t> pool = manifest.tumor_entries();
    if (batch_size == 0 || pool.size() < batch_size) {
        throw DataError("cannot draw a batch of " + std::to_string(batch_size) + " from " +
                        std::to_string(pool.size()) + " tumor-containing slices");
    }
    std::mt19937_64 rng(rng_seed);
    // Partial Fisher-Yates: the first batch_size positions form a uniform
    // sample without replacement.
    for (std::size_t i = 0; i < batch_size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(batch_size);
    return pool;
}

std::vector<std::vector<std::size_t>> epoch_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                                    std::uint64_t rng_seed) {
    std::vector<std::size_t> pool = manifest.tumor_entries();
    if (batch_size == 0 || pool.size() < batch_size) {
        throw DataError("need at least " + std::to_string(batch_size) + " tumor-containing slices, found " +
                        std::to_string(pool.size()));
    }
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = pool.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(pool[i - 1], pool[pick(rng)]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < pool.size(); start += batch_size) {
        const std::size_t stop = std::min(pool.size(), start + batch_size);
        batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                             pool.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return batches;
}

SliceDataset::SliceDataset(DatasetManifest manifest) : manifest_(std::move(manifest)) {}

const SliceDataset::LoadedSubject& SliceDataset::subject(std::size_t index) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(index);
    if (it != cache_.end()) return it->second;

    const SubjectFiles& files = manifest_.subjects.at(index);
    LoadedSubject loaded;
    loaded.mask = nifti::read_segmentation(files.segmentation);
    loaded.mask.subject_id = files.subject_id;
    for (Modality m : kAllModalities) {
        const auto idx = static_cast<std::size_t>(index_of(m));
        Volume3D raw = nifti::read_volume(files.modalities[idx], m);
        if (raw.dims != loaded.mask.dims) {
            throw DataError(files.subject_id + ": " + std::string(modality_tag(m)) + " shape differs from mask");
        }
        raw.subject_id = files.subject_id;
        loaded.images[idx] = normalize_volume(raw);
    }
    return cache_.emplace(index, std::move(loaded)).first->second;
}

MultiModalSample SliceDataset::sample(std::size_t entry_index) {
    const ManifestEntry& e = manifest_.entries.at(entry_index);
    const LoadedSubject& s = subject(e.subject);
    if (e.slice_index < 0 || e.slice_index >= s.mask.depth()) {
        throw DataError(e.subject_id + ": slice index " + std::to_string(e.slice_index) + " out of range");
    }
    MultiModalSample out;
    out.subject_id = e.subject_id;
    out.slice_index = e.slice_index;
    const auto h = s.mask.height();
    const auto w = s.mask.width();
    for (std::size_t m = 0; m < 4; ++m) {
        Slice2D img(h, w);
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) img(i, j) = s.images[m].at(i, j, e.slice_index);
        out.images[m] = std::move(img);
    }
    out.mask = LabelSlice2D(h, w);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) out.mask(i, j) = s.mask.at(i, j, e.slice_index);
    return out;
}

std::vector<MultiModalSample> SliceDataset::samples(const std::vector<std::size_t>& entry_indices) {
    std::vector<MultiModalSample> out;
    out.reserve(entry_indices.size());
    for (std::size_t idx : entry_indices) out.push_back(sample(idx));
    return out;
}

std::vector<MultiModalSample> sample_batch(SliceDataset& dataset, const MissingScenario& scenario,
                                           std::size_t batch_size, std::uint64_t rng_seed) {
    (void)scenario;  // every sample carries all four modalities; the target doubles as supervision
    return dataset.samples(draw_tumor_batch(dataset.manifest(), batch_size, rng_seed));
}

}  // namespace mmsyn
