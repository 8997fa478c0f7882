#include "doctest_torch.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "mmsyn/dataio.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/modality.hpp"
#include "mmsyn/nifti.hpp"
#include "mmsyn/phantom.hpp"
#include "test_util.hpp"

using namespace mmsyn;
namespace fs = std::filesystem;

namespace {

Volume3D random_volume(std::int64_t h, std::int64_t w, std::int64_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-500.0f, 3000.0f);
    Volume3D v(h, w, d);
    for (auto& x : v.voxels) x = u(rng);
    return v;
}

SegVolume3D random_mask(std::int64_t h, std::int64_t w, std::int64_t d, std::uint64_t seed, double density) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution on(density);
    std::uniform_int_distribution<int> label(1, 3);
    SegVolume3D s(h, w, d);
    for (auto& x : s.voxels) x = on(rng) ? static_cast<std::uint8_t>(label(rng)) : 0;
    return s;
}

}  // namespace

TEST_CASE("modality tags parse and scenarios list the other three in canonical order") {
    CHECK(parse_modality("flair") == Modality::FLAIR);
    CHECK(parse_modality("T1-ce") == Modality::T1CE);
    CHECK(parse_modality("t1c") == Modality::T1CE);
    CHECK(parse_modality("T2") == Modality::T2);
    CHECK_THROWS_AS(parse_modality("pd"), ConfigError);
    CHECK(modality_display(Modality::T1CE) == "T1-ce");
    for (Modality target : kAllModalities) {
        const auto s = MissingScenario::for_target(target);
        std::set<Modality> seen(s.sources.begin(), s.sources.end());
        CHECK(seen.size() == 3);
        CHECK(!seen.count(target));
        CHECK(std::is_sorted(s.sources.begin(), s.sources.end(),
                             [](Modality a, Modality b) { return index_of(a) < index_of(b); }));
    }
}

TEST_CASE("slice then stack reproduces arbitrary volumes exactly") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::int64_t h = 3 + static_cast<std::int64_t>(seed), w = 7 - static_cast<std::int64_t>(seed) / 2,
                           d = 1 + static_cast<std::int64_t>(seed * 2);
        const auto v = random_volume(h, w, d, seed);
        const auto slices = slice_axial(v);
        REQUIRE(slices.size() == static_cast<std::size_t>(d));
        CHECK(slices[0].height == h);
        CHECK(slices[0].width == w);
        const auto back = stack_axial(slices);
        CHECK(back.dims == v.dims);
        CHECK(std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * sizeof(float)) == 0);

        const auto m = random_mask(h, w, d, seed + 100, 0.3);
        CHECK(stack_axial(slice_axial(m)).voxels == m.voxels);
    }
    // Slice k, pixel (i, j) is voxel (i, j, k).
    const auto v = random_volume(4, 5, 3, 9);
    const auto s = slice_axial(v);
    CHECK(s[2](3, 4) == v.at(3, 4, 2));
    CHECK(s[1](0, 2) == v.at(0, 2, 1));
}

TEST_CASE("stacking slices of different shapes is rejected") {
    std::vector<Slice2D> slices{Slice2D(4, 4), Slice2D(4, 5)};
    CHECK_THROWS(stack_axial(slices));
}

TEST_CASE("normalization maps the foreground onto [-1, 1]") {
    Volume3D v(4, 4, 2);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = i % 3 == 0 ? 0.0f : 100.0f + static_cast<float>(i);
    NormalizationStats stats;
    const auto n = normalize_volume(v, &stats);
    CHECK(stats.min == doctest::Approx(101.0));
    CHECK(stats.max == doctest::Approx(131.0));
    float lo = 2, hi = -2;
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        if (v.voxels[i] == 0.0f) {
            CHECK(n.voxels[i] == -1.0f);
        } else {
            lo = std::min(lo, n.voxels[i]);
            hi = std::max(hi, n.voxels[i]);
        }
    }
    CHECK(lo == -1.0f);
    CHECK(hi == 1.0f);

    SUBCASE("constant foreground maps to zero") {
        Volume3D c(3, 3, 1, 5.0f);
        c.voxels[0] = 0.0f;
        const auto nc = normalize_volume(c);
        CHECK(nc.voxels[0] == -1.0f);
        for (std::size_t i = 1; i < nc.voxels.size(); ++i) CHECK(nc.voxels[i] == 0.0f);
    }
    SUBCASE("non-finite voxels are rejected") {
        Volume3D bad(2, 2, 1, 1.0f);
        bad.voxels[3] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(normalize_volume(bad), DataError);
    }
}

TEST_CASE("normalizing an already normalized foreground changes nothing beyond 1e-6") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto v = random_volume(8, 6, 3, seed);
        std::mt19937_64 rng(seed);
        for (auto& x : v.voxels)
            if (rng() % 4 == 0) x = 0.0f;
        const auto once = normalize_volume(v);
        const auto twice = normalize_volume(once);
        for (std::size_t i = 0; i < once.voxels.size(); ++i) {
            // Exact 0 after the first pass reads as background in the second.
            if (once.voxels[i] == 0.0f) continue;
            CHECK(std::abs(twice.voxels[i] - once.voxels[i]) <= 1e-6);
        }
    }
}

TEST_CASE("NIfTI write/read is voxel-exact at stored precision") {
    testutil::TempDir dir("nifti");
    auto v = random_volume(9, 7, 5, 42);
    v.spacing = {1.0f, 1.5f, 2.0f};
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        nifti::write_volume(v, dir / name);
        const auto back = nifti::read_volume(dir / name, Modality::T2);
        CHECK(back.dims == v.dims);
        CHECK(back.spacing == v.spacing);
        CHECK(back.modality == Modality::T2);
        CHECK(std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * sizeof(float)) == 0);
    }
    const auto m = random_mask(9, 7, 5, 43, 0.2);
    nifti::write_segmentation(m, dir / "s.nii.gz");
    CHECK(nifti::read_segmentation(dir / "s.nii.gz").voxels == m.voxels);

    SUBCASE("gzip output is byte-reproducible") {
        nifti::write_volume(v, dir / "again.nii.gz");
        CHECK(testutil::read_file(dir / "again.nii.gz") == testutil::read_file(dir / "v.nii.gz"));
    }
}

TEST_CASE("NIfTI reader rejects bad input with a data error") {
    testutil::TempDir dir("nifti-bad");
    SUBCASE("missing file") { CHECK_THROWS_AS(nifti::read_volume(dir / "none.nii.gz", Modality::T1), DataError); }
    SUBCASE("NaN voxels") {
        Volume3D v(4, 4, 2, 1.0f);
        v.voxels[5] = std::numeric_limits<float>::quiet_NaN();
        v.voxels[6] = std::numeric_limits<float>::infinity();
        nifti::write_volume(v, dir / "nan.nii");
        try {
            nifti::read_volume(dir / "nan.nii", Modality::T1);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("NaN: 1") != std::string::npos);
            CHECK(std::string(e.what()).find("Inf: 1") != std::string::npos);
        }
    }
    SUBCASE("4D image") {
        Volume3D v(4, 4, 2, 1.0f);
        nifti::write_volume(v, dir / "four.nii");
        std::fstream f(dir / "four.nii", std::ios::in | std::ios::out | std::ios::binary);
        const std::int16_t dim0 = 4, dim4 = 3;
        f.seekp(40);
        f.write(reinterpret_cast<const char*>(&dim0), 2);
        f.seekp(48);
        f.write(reinterpret_cast<const char*>(&dim4), 2);
        f.close();
        try {
            nifti::read_volume(dir / "four.nii", Modality::T1);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("expected 3D volume") != std::string::npos);
        }
    }
    SUBCASE("truncated file") {
        Volume3D v(8, 8, 4, 1.0f);
        nifti::write_volume(v, dir / "t.nii");
        const auto bytes = testutil::read_file(dir / "t.nii");
        std::ofstream(dir / "cut.nii", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        CHECK_THROWS_AS(nifti::read_volume(dir / "cut.nii", Modality::T1), DataError);
    }
    SUBCASE("segmentation labels: 4 is read as 3, others outside {0..3} are rejected") {
        Volume3D lab(3, 3, 1, 0.0f);
        lab.voxels[0] = 4.0f;
        lab.voxels[1] = 2.0f;
        nifti::write_volume(lab, dir / "lab4.nii");
        const auto s = nifti::read_segmentation(dir / "lab4.nii");
        CHECK(s.voxels[0] == 3);
        CHECK(s.voxels[1] == 2);
        lab.voxels[2] = 7.0f;
        nifti::write_volume(lab, dir / "lab7.nii");
        CHECK_THROWS_AS(nifti::read_segmentation(dir / "lab7.nii"), DataError);
    }
}

TEST_CASE("phantom corpus regenerates byte-identically from its seed") {
    testutil::TempDir a("ph-a"), b("ph-b");
    make_phantom_dataset(a.path(), 2, 32, 4, 7);
    make_phantom_dataset(b.path(), 2, 32, 4, 7);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a.path());
        CHECK(testutil::file_hash(e.path()) == testutil::file_hash(b.path() / rel));
        ++files;
    }
    CHECK(files == 10);
}

TEST_CASE("phantom anatomy: zero background, valid labels, tumor near the centre") {
    const auto s = make_phantom_subject(64, 8, 3, "p");
    CHECK(s.mask.dims == s.modalities[0].dims);
    std::size_t tumor = 0;
    for (std::size_t i = 0; i < s.mask.voxels.size(); ++i) {
        CHECK(s.mask.voxels[i] <= 3);
        if (s.mask.voxels[i]) {
            ++tumor;
            for (const auto& m : s.modalities) CHECK(m.voxels[i] != 0.0f);
        }
    }
    CHECK(tumor > 0);
    for (const auto& m : s.modalities) {
        CHECK(m.at(0, 0, 0) == 0.0f);
        CHECK(m.at(63, 63, 7) == 0.0f);
        for (float x : m.voxels) CHECK(std::isfinite(x));
    }
    // All three tumor labels occur.
    std::set<int> labels(s.mask.voxels.begin(), s.mask.voxels.end());
    CHECK(labels == std::set<int>{0, 1, 2, 3});
    CHECK_THROWS(make_phantom_subject(8, 8, 0, "tiny"));
}

TEST_CASE("manifest tumor flags equal a brute-force scan of every mask slice") {
    testutil::TempDir dir("manifest");
    make_phantom_dataset(dir.path(), 2, 32, 8, 11);
    const auto manifest = build_manifest(dir.path());
    REQUIRE(manifest.subjects.size() == 2);
    CHECK(manifest.entries.size() == 16);
    CHECK(manifest.warnings.empty());
    std::size_t brute_tumor = 0;
    for (const auto& e : manifest.entries) {
        const auto mask = nifti::read_segmentation(manifest.subjects[e.subject].segmentation);
        bool any = false;
        for (std::int64_t j = 0; j < mask.width(); ++j)
            for (std::int64_t i = 0; i < mask.height(); ++i) any = any || mask.at(i, j, e.slice_index) != 0;
        CHECK(e.has_tumor == any);
        brute_tumor += any;
    }
    CHECK(manifest.tumor_count() == brute_tumor);
    CHECK(brute_tumor > 0);
    CHECK(brute_tumor < 16);

    SUBCASE("save/load round trip") {
        save_manifest(manifest, dir / "m.jsonl");
        const auto back = load_manifest(dir / "m.jsonl");
        REQUIRE(back.entries.size() == manifest.entries.size());
        for (std::size_t i = 0; i < back.entries.size(); ++i) {
            CHECK(back.entries[i].subject_id == manifest.entries[i].subject_id);
            CHECK(back.entries[i].slice_index == manifest.entries[i].slice_index);
            CHECK(back.entries[i].has_tumor == manifest.entries[i].has_tumor);
        }
        CHECK(back.normalization.at("phantom-001")[3].max == manifest.normalization.at("phantom-001")[3].max);
    }
}

TEST_CASE("subjects with a missing modality are skipped with a warning") {
    testutil::TempDir dir("missing");
    make_phantom_dataset(dir.path(), 3, 16, 2, 5);
    fs::remove(modality_path(dir.path() / "phantom-001", "phantom-001", Modality::T1CE));
    const auto manifest = build_manifest(dir.path());
    CHECK(manifest.subjects.size() == 2);
    CHECK(manifest.entries.size() == 4);
    REQUIRE(manifest.warnings.size() == 1);
    CHECK(manifest.warnings[0].subject_id == "phantom-001");
}

TEST_CASE("a full-size corpus of 1,251 subjects x 155 slices gives 193,905 entries") {
    DatasetManifest manifest;
    SegVolume3D mask(4, 4, 155);
    for (std::int64_t k = 40; k < 100; ++k) mask.at(1, 1, k) = 2;
    for (int s = 0; s < 1251; ++s) {
        SubjectFiles files;
        files.subject_id = "BraTS-" + std::to_string(s);
        append_subject(manifest, files, mask);
    }
    CHECK(manifest.entries.size() == 193905);
    CHECK(manifest.tumor_count() == 1251u * 60u);
}

TEST_CASE("seeded batch sampling is deterministic and draws tumor entries only") {
    DatasetManifest manifest;
    SegVolume3D mask(2, 2, 20);
    for (std::int64_t k = 0; k < 20; k += 2) mask.at(0, 0, k) = 1;
    append_subject(manifest, {"a", {}, {}}, mask);
    CHECK(draw_tumor_batch(manifest, 4, 77) == draw_tumor_batch(manifest, 4, 77));
    CHECK(draw_tumor_batch(manifest, 4, 77) != draw_tumor_batch(manifest, 4, 78));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto batch = draw_tumor_batch(manifest, 4, seed);
        CHECK(std::set<std::size_t>(batch.begin(), batch.end()).size() == 4);
        for (auto idx : batch) CHECK(manifest.entries[idx].has_tumor);
    }
    const auto epoch = epoch_batches(manifest, 4, 3);
    CHECK(epoch.size() == 3);
    CHECK(epoch.back().size() == 2);
    std::multiset<std::size_t> all;
    for (const auto& b : epoch) all.insert(b.begin(), b.end());
    const auto tumor = manifest.tumor_entries();
    CHECK(all == std::multiset<std::size_t>(tumor.begin(), tumor.end()));
    CHECK_THROWS(draw_tumor_batch(manifest, 11, 0));
}

TEST_CASE("tumor batch draws are uniform over tumor entries (10,000 batches, 3 sigma)") {
    DatasetManifest manifest;
    SegVolume3D mask(2, 2, 30);
    for (std::int64_t k = 0; k < 30; k += 3) mask.at(1, 0, k) = 3;
    append_subject(manifest, {"u", {}, {}}, mask);
    const auto tumor = manifest.tumor_entries();
    const double n_batches = 10000, bs = 4, n = static_cast<double>(tumor.size());
    std::map<std::size_t, double> counts;
    for (std::uint64_t seed = 0; seed < 10000; ++seed)
        for (auto idx : draw_tumor_batch(manifest, 4, seed)) counts[idx] += 1;
    // Each entry is in a batch with probability bs/n.
    const double p = bs / n;
    const double mean = n_batches * p, sigma = std::sqrt(n_batches * p * (1 - p));
    CHECK(counts.size() == tumor.size());
    for (const auto& [idx, c] : counts) CHECK(std::abs(c - mean) <= 3 * sigma);
}

TEST_CASE("slice dataset yields normalized aligned samples") {
    testutil::TempDir dir("dataset");
    make_phantom_dataset(dir.path(), 1, 32, 4, 2);
    SliceDataset ds(build_manifest(dir.path()));
    const auto idx = ds.manifest().tumor_entries().at(0);
    const auto s = ds.sample(idx);
    CHECK(s.subject_id == "phantom-000");
    CHECK(s.slice_index == ds.manifest().entries[idx].slice_index);
    bool any_label = false;
    for (const auto& img : s.images) {
        CHECK(img.height == 32);
        for (float x : img.data) CHECK((x >= -1.0f && x <= 1.0f));
    }
    for (auto l : s.mask.data) any_label = any_label || l != 0;
    CHECK(any_label);
    const auto scenario = MissingScenario::for_target(Modality::FLAIR);
    CHECK(sample_batch(ds, scenario, 2, 5).size() == 2);
}
