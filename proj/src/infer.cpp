#include "mmsyn/infer.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mmsyn/dataio.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/nifti.hpp"

namespace mmsyn {

SynthesisResult synthesize_volume(ScenarioModel& model, const std::array<Volume3D, 3>& sources,
                                  std::int64_t slices_per_batch) {
    const auto& expected = model.scenario.sources;
    for (std::size_t i = 0; i < 3; ++i) {
        if (sources[i].modality != expected[i]) {
            throw DataError("source " + std::to_string(i) + " is " + std::string(modality_tag(sources[i].modality)) +
                            "; the " + model.scenario.tag() + " model expects sources " +
                            std::string(modality_tag(expected[0])) + ", " + std::string(modality_tag(expected[1])) +
                            ", " + std::string(modality_tag(expected[2])));
        }
        if (sources[i].dims != sources[0].dims) throw DataError("source volumes are not co-registered: shapes differ");
    }
    if (slices_per_batch < 1) slices_per_batch = 1;

    const auto h = sources[0].height(), w = sources[0].width(), d = sources[0].depth();
    // [D, 3, H, W] stack of normalized source slices; row i of a slice is axis 0.
    auto input = torch::empty({d, 3, h, w}, torch::kFloat32);
    for (std::size_t s = 0; s < 3; ++s) {
        const Volume3D norm = normalize_volume(sources[s]);
        auto acc = input.accessor<float, 4>();
        for (std::int64_t k = 0; k < d; ++k)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) acc[k][static_cast<std::int64_t>(s)][i][j] = norm.at(i, j, k);
    }

    torch::NoGradGuard no_grad;
    model.model->eval();
    const torch::Device device(model.config.device);
    SynthesisResult result;
    result.volume = Volume3D(h, w, d);
    result.volume.spacing = sources[0].spacing;
    result.volume.subject_id = sources[0].subject_id;
    result.volume.modality = model.scenario.target;
    result.seg_volume = SegVolume3D(h, w, d);
    result.seg_volume.spacing = sources[0].spacing;
    result.seg_volume.subject_id = sources[0].subject_id;

    for (std::int64_t start = 0; start < d; start += slices_per_batch) {
        const auto n = std::min(slices_per_batch, d - start);
        const auto out = model.model->generator->forward(input.narrow(0, start, n).to(device));
        const auto image = ((out.image.squeeze(1) + 1.0) * 0.5).clamp(0.0, 1.0).to(torch::kCPU).contiguous();
        const auto labels = out.seg_logits.argmax(1).to(torch::kCPU).contiguous();
        const auto img = image.accessor<float, 3>();
        const auto lab = labels.accessor<std::int64_t, 3>();
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    result.volume.at(i, j, start + b) = img[b][i][j];
                    result.seg_volume.at(i, j, start + b) = static_cast<std::uint8_t>(lab[b][i][j]);
                }
    }
    result.provenance = {model.scenario.tag(), model.model->config().fingerprint(), ""};
    return result;
}

std::filesystem::path synthesized_path(const std::filesystem::path& dir, const std::string& subject, Modality target) {
    return dir / (subject + "_" + std::string(modality_tag(target)) + "-syn.nii.gz");
}

std::filesystem::path synthesized_seg_path(const std::filesystem::path& dir, const std::string& subject) {
    return dir / (subject + "_seg-syn.nii.gz");
}

void write_result(const SynthesisResult& result, const std::filesystem::path& out_dir) {
    const std::string subject = result.volume.subject_id.empty() ? "subject" : result.volume.subject_id;
    const Modality target = result.volume.modality;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    nifti::write_volume(result.volume, synthesized_path(out_dir, subject, target));
    nifti::write_segmentation(result.seg_volume, synthesized_seg_path(out_dir, subject));

    const nlohmann::json sidecar = {{"subject_id", subject},
                                    {"scenario", result.provenance.scenario},
                                    {"target", std::string(modality_tag(target))},
                                    {"fingerprint", result.provenance.fingerprint},
                                    {"checkpoint", result.provenance.checkpoint},
                                    {"intensity_range", {0.0, 1.0}}};
    std::ofstream out(out_dir / (subject + "_" + std::string(modality_tag(target)) + "-syn.json"));
    out << sidecar.dump(2) << '\n';
    if (!out) throw DataError("failed writing provenance sidecar in " + out_dir.string());
}

}  // namespace mmsyn
