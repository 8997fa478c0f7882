#pragma once

#include <cstdint>
#include <exception>
#include <memory>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "mmsyn/dataio.hpp"
#include "mmsyn/losses.hpp"
#include "mmsyn/modality.hpp"
#include "mmsyn/nets.hpp"
#include "mmsyn/qsattn.hpp"

namespace mmsyn {

struct TrainConfig {
    double lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int batch_size = 4;
    int sr_epochs = 200;
    int gen_epochs = 300;
    std::uint64_t seed = 0;
    losses::LossWeights weights;
    int K = 256;  // contrastive queries per feature level
    MissingScenario scenario = MissingScenario::for_target(Modality::FLAIR);
    int checkpoint_every = 0;  // epochs between intermediate checkpoints; 0 disables
    std::filesystem::path checkpoint_dir;

    NetConfig net;
    qsattn::AttentionOptions attention;
    losses::AdversarialForm adversarial = losses::AdversarialForm::NonSaturating;
    losses::KlDirection kl_direction = losses::KlDirection::SrToGen;
    bool freeze_sr = true;
    double grad_clip = 0.0;  // max global grad norm; 0 disables
    std::string device = "cpu";

    // Throws ConfigError naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    std::string stage;  // "sr" or "translation"
    std::string target;
    losses::LossBreakdown breakdown;  // translation stage
    double d_loss = 0.0;              // translation stage
    double sr_l1 = 0.0;               // sr stage
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
    static StepRecord from_json(const nlohmann::json& j);
};

struct TrainLog {
    std::vector<StepRecord> records;

    void write_jsonl(const std::filesystem::path& path) const;
    static TrainLog read_jsonl(const std::filesystem::path& path);
};

// One optimization batch on the training device.
struct Batch {
    torch::Tensor sources;  // [B, 3, H, W], scenario source order
    torch::Tensor target;   // [B, 1, H, W]
    torch::Tensor mask;     // [B, H, W], int64
};

Batch make_batch(const std::vector<MultiModalSample>& samples, const MissingScenario& scenario,
                 const torch::Device& device = torch::kCPU);

torch::Tensor to_tensor(const Slice2D& s);  // [1, H, W]

struct SrPretrainResult {
    SRNet net{nullptr};
    TrainLog log;
};

// L1 reconstruction of the scenario's target modality over tumor slices.
// Throws NumericalError with the step index on a non-finite loss.
SrPretrainResult pretrain_sr(const TrainConfig& config, SliceDataset& dataset);

// The trainable state of one translation run and the per-batch update rules.
class TranslationTrainer {
public:
    TranslationTrainer(const TrainConfig& config, const SRNet& pretrained_sr);

    TranslationModel& model() { return model_; }
    const TrainConfig& config() const { return config_; }

    // Forward pass of every Eq.-style generator objective term on `batch`.
    losses::LossTerms generator_terms(const Batch& batch);
    // Generator output for the last generator_terms() call.
    const GeneratorOutput& last_output() const { return last_output_; }

    // Discriminator update against a fixed (detached) synthetic image.
    double discriminator_step(const Batch& batch, const torch::Tensor& fake);
    // Generator update on the weighted total; discriminator parameters do not
    // accumulate gradients.
    losses::LossBreakdown generator_step(const Batch& batch, std::int64_t step);
    // One full D-then-G update.
    StepRecord train_step(const Batch& batch, std::int64_t step, int epoch);

    // Weighted total evaluated without updating anything.
    double evaluate_total(const Batch& batch);

private:
    TrainConfig config_;
    torch::Device device_;
    TranslationModel model_;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    GeneratorOutput last_output_;
};

struct ScenarioModel {
    MissingScenario scenario;
    TranslationModel model{nullptr};
    TrainConfig config;
    TrainLog sr_log;
    TrainLog log;
};

ScenarioModel train_translation(const TrainConfig& config, SliceDataset& dataset, const SRNet& sr);

// Checkpoint with scenario tag, training config and the SR target tag in its metadata.
void save_scenario_model(const ScenarioModel& m, const std::filesystem::path& path);
ScenarioModel load_scenario_model(const std::filesystem::path& path);

struct ScenarioRun {
    MissingScenario scenario;
    std::filesystem::path checkpoint;
    std::optional<ScenarioModel> model;
    std::string error;  // empty on success
    std::exception_ptr failure;
};

// Dedicated training: one SR pretraining and one translation run per missing
// modality, each with its own seed. Failures are recorded and the remaining
// scenarios still run. Writes `mmsyn_<TAG>.ckpt`, `<TAG>_sr_log.jsonl` and
// `<TAG>_train_log.jsonl` into out_dir.
std::vector<ScenarioRun> train_all_scenarios(const TrainConfig& base, SliceDataset& dataset,
                                             const std::filesystem::path& out_dir,
                                             const std::vector<Modality>& targets = {kAllModalities.begin(),
                                                                                     kAllModalities.end()});

struct FitReport {
    double mean_ssim = 0.0;   // mean over tumor slices, [0,1] convention, brain foreground
    double tumor_dice = 0.0;  // pooled Dice of (pred > 0) vs (mask > 0)
    std::size_t slices = 0;
};

// Scores a trained model on the dataset's tumor-containing slices.
FitReport fit_report(ScenarioModel& model, SliceDataset& dataset);

}  // namespace mmsyn
