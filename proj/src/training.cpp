#include "mmsyn/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mmsyn/checkpoint.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/evalrep.hpp"

namespace mmsyn {

using nlohmann::json;

namespace {

std::string adversarial_name(losses::AdversarialForm f) {
    return f == losses::AdversarialForm::LeastSquares ? "least_squares" : "nonsaturating";
}

std::string kl_name(losses::KlDirection d) { return d == losses::KlDirection::GenToSr ? "gen_to_sr" : "sr_to_gen"; }

void check_finite(double v, const std::string& what, std::int64_t step) {
    if (!std::isfinite(v)) {
        throw NumericalError("non-finite loss component '" + what + "' at step " + std::to_string(step));
    }
}

// Seed for the batch order of one epoch; distinct streams per stage.
std::uint64_t epoch_seed(std::uint64_t seed, int stage, int epoch) {
    return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(stage) * 1000003ULL +
           static_cast<std::uint64_t>(epoch);
}

void copy_module_state(const torch::nn::Module& src, torch::nn::Module& dst) {
    torch::NoGradGuard no_grad;
    auto from = src.named_parameters(true);
    for (auto& p : dst.named_parameters(true)) p.value().copy_(from[p.key()]);
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("train.lr", "must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("train.beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("train.beta2", "must lie in [0, 1)");
    if (batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (sr_epochs < 1) fail("train.sr_epochs", "must be >= 1");
    if (gen_epochs < 1) fail("train.gen_epochs", "must be >= 1");
    if (K < 1) fail("train.K", "must be >= 1");
    if (checkpoint_every < 0) fail("train.checkpoint_every", "must be >= 0");
    if (grad_clip < 0.0) fail("train.grad_clip", "must be >= 0");
    try {
        weights.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("loss.") + e.what());
    }
    if (net.levels < 1 || net.base_width < 1 || net.disc_width < 1 || net.disc_layers < 1 || net.attention_reduction < 1) {
        fail("net", "widths, levels and layer counts must be >= 1");
    }
}

json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"beta1", adam_beta1},
            {"beta2", adam_beta2},
            {"batch_size", batch_size},
            {"sr_epochs", sr_epochs},
            {"gen_epochs", gen_epochs},
            {"seed", seed},
            {"K", K},
            {"scenario", scenario.tag()},
            {"checkpoint_every", checkpoint_every},
            {"freeze_sr", freeze_sr},
            {"grad_clip", grad_clip},
            {"device", device},
            {"loss",
             {{"alpha", weights.alpha},
              {"beta", weights.beta},
              {"gamma", weights.gamma},
              {"delta", weights.delta},
              {"eta", weights.eta},
              {"tau", weights.tau},
              {"adversarial", adversarial_name(adversarial)},
              {"kl_direction", kl_name(kl_direction)}}},
            {"attention", {{"scale", attention.scale}, {"detach", attention.detach_attention}}},
            {"net", net.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.adam_beta1 = j.at("beta1").get<double>();
    c.adam_beta2 = j.at("beta2").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.sr_epochs = j.at("sr_epochs").get<int>();
    c.gen_epochs = j.at("gen_epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.K = j.at("K").get<int>();
    c.scenario = MissingScenario::for_target(parse_modality(j.at("scenario").get<std::string>()));
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.freeze_sr = j.at("freeze_sr").get<bool>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.device = j.value("device", std::string("cpu"));
    const auto& l = j.at("loss");
    c.weights = {l.at("alpha").get<double>(), l.at("beta").get<double>(), l.at("gamma").get<double>(),
                 l.at("delta").get<double>(), l.at("eta").get<double>(), l.at("tau").get<double>()};
    c.adversarial = l.at("adversarial") == "least_squares" ? losses::AdversarialForm::LeastSquares
                                                            : losses::AdversarialForm::NonSaturating;
    c.kl_direction = l.at("kl_direction") == "gen_to_sr" ? losses::KlDirection::GenToSr : losses::KlDirection::SrToGen;
    c.attention.scale = j.at("attention").at("scale").get<bool>();
    c.attention.detach_attention = j.at("attention").at("detach").get<bool>();
    c.net = NetConfig::from_json(j.at("net"));
    return c;
}

json StepRecord::to_json() const {
    json j = {{"step", step}, {"epoch", epoch}, {"stage", stage}, {"target", target}, {"wall_seconds", wall_seconds}};
    if (stage == "sr") {
        j["sr_l1"] = sr_l1;
    } else {
        j["loss"] = breakdown.to_json();
        j["d_loss"] = d_loss;
    }
    return j;
}

StepRecord StepRecord::from_json(const json& j) {
    StepRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.epoch = j.at("epoch").get<int>();
    r.stage = j.at("stage").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (r.stage == "sr") {
        r.sr_l1 = j.at("sr_l1").get<double>();
    } else {
        const auto& l = j.at("loss");
        r.breakdown = {l.at("adv").get<double>(), l.at("con").get<double>(),        l.at("seg").get<double>(),
                       l.at("sr_decoder").get<double>(), l.at("smr").get<double>(), l.at("mmr").get<double>(),
                       l.at("total").get<double>()};
        r.d_loss = j.at("d_loss").get<double>();
    }
    return r;
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    for (const auto& r : records) out << r.to_json().dump() << '\n';
    if (!out) throw DataError("failed writing training log " + path.string());
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read training log " + path.string());
    TrainLog log;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) log.records.push_back(StepRecord::from_json(json::parse(line)));
    return log;
}

torch::Tensor to_tensor(const Slice2D& s) {
    return torch::from_blob(const_cast<float*>(s.data.data()), {1, s.height, s.width}, torch::kFloat32).clone();
}

Batch make_batch(const std::vector<MultiModalSample>& samples, const MissingScenario& scenario, const torch::Device& device) {
    if (samples.empty()) throw DataError("make_batch: empty batch");
    std::vector<torch::Tensor> sources, targets, masks;
    for (const auto& s : samples) {
        std::vector<torch::Tensor> chans;
        for (Modality m : scenario.sources) chans.push_back(to_tensor(s.image(m)));
        sources.push_back(torch::cat(chans, 0));
        targets.push_back(to_tensor(s.image(scenario.target)));
        auto mask = torch::empty({s.mask.height, s.mask.width}, torch::kInt64);
        auto acc = mask.accessor<std::int64_t, 2>();
        for (std::int64_t i = 0; i < s.mask.height; ++i)
            for (std::int64_t j = 0; j < s.mask.width; ++j) acc[i][j] = s.mask(i, j);
        masks.push_back(mask);
    }
    return {torch::stack(sources).to(device), torch::stack(targets).to(device), torch::stack(masks).to(device)};
}

SrPretrainResult pretrain_sr(const TrainConfig& config, SliceDataset& dataset) {
    config.validate();
    const torch::Device device(config.device);
    torch::manual_seed(config.seed);
    SrPretrainResult result{SRNet(config.net), {}};
    result.net->to(device);
    result.net->train();
    torch::optim::Adam opt(result.net->parameters(),
                           torch::optim::AdamOptions(config.lr).betas({config.adam_beta1, config.adam_beta2}));

    const auto started = std::chrono::steady_clock::now();
    std::int64_t step = 0;
    for (int epoch = 0; epoch < config.sr_epochs; ++epoch) {
        for (const auto& idx : epoch_batches(dataset.manifest(), static_cast<std::size_t>(config.batch_size),
                                             epoch_seed(config.seed, 0, epoch))) {
            const Batch batch = make_batch(dataset.samples(idx), config.scenario, device);
            auto out = result.net->forward(batch.target);
            auto loss = (out.recon - batch.target).abs().mean();
            const double value = loss.item<double>();
            check_finite(value, "sr_l1", step);
            opt.zero_grad();
            loss.backward();
            if (config.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(result.net->parameters(), config.grad_clip);
            opt.step();

            StepRecord rec;
            rec.step = step++;
            rec.epoch = epoch;
            rec.stage = "sr";
            rec.target = config.scenario.tag();
            rec.sr_l1 = value;
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            result.log.records.push_back(rec);
        }
    }
    return result;
}

TranslationTrainer::TranslationTrainer(const TrainConfig& config, const SRNet& pretrained_sr)
    : config_(config), device_(config.device), model_(nullptr) {
    config_.validate();
    torch::manual_seed(config_.seed + 1);
    model_ = TranslationModel(config_.net);
    copy_module_state(*pretrained_sr, *model_->sr);
    model_->to(device_);
    model_->train();
    if (config_.freeze_sr) {
        for (auto& p : model_->sr->parameters()) p.set_requires_grad(false);
    }
    const auto adam = torch::optim::AdamOptions(config_.lr).betas({config_.adam_beta1, config_.adam_beta2});
    auto g_params = model_->generator->parameters();
    if (!config_.freeze_sr) {
        const auto sr_params = model_->sr->parameters();
        g_params.insert(g_params.end(), sr_params.begin(), sr_params.end());
    }
    opt_g_ = std::make_unique<torch::optim::Adam>(g_params, adam);
    opt_d_ = std::make_unique<torch::optim::Adam>(model_->discriminator->parameters(), adam);
}

losses::LossTerms TranslationTrainer::generator_terms(const Batch& batch) {
    auto& g = model_->generator;
    last_output_ = g->forward(batch.sources);
    const auto& out = last_output_;
    if (out.fusion_feature.values.size(2) * out.fusion_feature.values.size(3) < 2) {
        throw ConfigError("contrastive learning needs at least 2 fused spatial positions; increase the input size");
    }

    // Contrastive term at both fused levels; selection comes from the real
    // sources and is reused for the re-encoded synthetic image.
    const FusedFeatures fake = g->encode_generated(out.image);
    const std::pair<const torch::Tensor*, const torch::Tensor*> levels[] = {
        {&out.fusion_feature.values, &fake.fusion_feature.values},
        {&out.fusion_post_conv_feature.values, &fake.fusion_post_conv_feature.values}};
    torch::Tensor con;
    for (const auto& [source, generated] : levels) {
        const auto attention = qsattn::global_attention(*source, config_.attention);
        const auto selection = qsattn::select_queries(attention, qsattn::row_entropy(attention), config_.K);
        const auto positives = qsattn::route_features(selection, *source);
        const auto anchors = qsattn::route_features(selection, *generated);
        auto level_loss = losses::contrastive_loss(anchors, positives, config_.weights.tau);
        con = con.defined() ? con + level_loss : level_loss;
    }
    con = con / 2.0;

    SROutput sr;
    {
        std::optional<torch::NoGradGuard> no_grad;
        if (config_.freeze_sr) no_grad.emplace();
        sr = model_->sr->forward(batch.target);
    }

    std::vector<torch::Tensor> branch_finals;
    for (const auto& branch : out.encoder_features) branch_finals.push_back(branch.back().values);

    losses::LossTerms t;
    t.adv = losses::generator_adversarial_loss(model_->discriminator->forward(out.image), config_.adversarial);
    t.con = con;
    t.seg = losses::segmentation_loss(out.seg_logits, batch.mask);
    t.sr_decoder = losses::sr_decoder_loss(out.decoder_features, sr.decoder_features, config_.kl_direction);
    t.smr = losses::smr_loss(branch_finals, sr.encoder_features.back().values);
    t.mmr = losses::mmr_loss(out.fusion_post_conv_feature.values, sr.bottleneck.values);
    return t;
}

double TranslationTrainer::discriminator_step(const Batch& batch, const torch::Tensor& fake) {
    auto& d = model_->discriminator;
    const auto d_loss = losses::discriminator_adversarial_loss(d->forward(batch.target), d->forward(fake.detach()),
                                                               config_.adversarial);
    const double value = d_loss.item<double>();
    opt_d_->zero_grad();
    d_loss.backward();
    if (config_.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(d->parameters(), config_.grad_clip);
    opt_d_->step();
    return value;
}

losses::LossBreakdown TranslationTrainer::generator_step(const Batch& batch, std::int64_t step) {
    auto d_params = model_->discriminator->parameters();
    for (auto& p : d_params) p.set_requires_grad(false);
    struct Restore {
        std::vector<torch::Tensor>& params;
        ~Restore() {
            for (auto& p : params) p.set_requires_grad(true);
        }
    } restore{d_params};

    const auto terms = generator_terms(batch);
    const auto total = losses::weighted_total(terms, config_.weights);

    losses::LossBreakdown parts{terms.adv.item<double>(),        terms.con.item<double>(), terms.seg.item<double>(),
                                terms.sr_decoder.item<double>(), terms.smr.item<double>(), terms.mmr.item<double>(), 0.0};
    const std::pair<const char*, double> named[] = {{"adv", parts.adv}, {"con", parts.con},
                                                    {"seg", parts.seg}, {"sr_decoder", parts.sr_decoder},
                                                    {"smr", parts.smr}, {"mmr", parts.mmr}};
    for (const auto& [name, value] : named) check_finite(value, name, step);
    const auto breakdown = losses::total_generator_loss(parts, config_.weights);

    opt_g_->zero_grad();
    total.backward();
    if (config_.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model_->generator->parameters(), config_.grad_clip);
    opt_g_->step();
    return breakdown;
}

StepRecord TranslationTrainer::train_step(const Batch& batch, std::int64_t step, int epoch) {
    torch::Tensor fake;
    {
        torch::NoGradGuard no_grad;
        fake = model_->generator->forward(batch.sources).image;
    }
    StepRecord rec;
    rec.d_loss = discriminator_step(batch, fake);
    check_finite(rec.d_loss, "d_adv", step);
    rec.breakdown = generator_step(batch, step);
    rec.step = step;
    rec.epoch = epoch;
    rec.stage = "translation";
    rec.target = config_.scenario.tag();
    return rec;
}

double TranslationTrainer::evaluate_total(const Batch& batch) {
    torch::NoGradGuard no_grad;
    return losses::weighted_total(generator_terms(batch), config_.weights).item<double>();
}

ScenarioModel train_translation(const TrainConfig& config, SliceDataset& dataset, const SRNet& sr) {
    if (dataset.manifest().tumor_count() < static_cast<std::size_t>(config.batch_size)) {
        throw DataError("train_translation: " + std::to_string(dataset.manifest().tumor_count()) +
                        " tumor slices available, batch size " + std::to_string(config.batch_size));
    }
    TranslationTrainer trainer(config, sr);
    ScenarioModel result;
    result.scenario = config.scenario;
    result.config = config;

    const torch::Device device(config.device);
    const auto started = std::chrono::steady_clock::now();
    std::int64_t step = 0;
    for (int epoch = 0; epoch < config.gen_epochs; ++epoch) {
        for (const auto& idx : epoch_batches(dataset.manifest(), static_cast<std::size_t>(config.batch_size),
                                             epoch_seed(config.seed, 1, epoch))) {
            const Batch batch = make_batch(dataset.samples(idx), config.scenario, device);
            StepRecord rec = trainer.train_step(batch, step++, epoch);
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            result.log.records.push_back(rec);
        }
        if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() && (epoch + 1) % config.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "mmsyn_%s_epoch%04d.ckpt", config.scenario.tag().c_str(), epoch + 1);
            save_params(trainer.model(), config.checkpoint_dir / name,
                        {{"scenario", config.scenario.tag()}, {"epoch", epoch + 1}, {"train", config.to_json()}});
        }
    }
    result.model = trainer.model();
    result.model->eval();
    return result;
}

void save_scenario_model(const ScenarioModel& m, const std::filesystem::path& path) {
    const std::string sr_target = m.sr_log.records.empty() ? m.scenario.tag() : m.sr_log.records.front().target;
    save_params(m.model, path,
                {{"scenario", m.scenario.tag()},
                 {"sr_target", sr_target},
                 {"train", m.config.to_json()},
                 {"translation_steps", m.log.records.size()},
                 {"sr_steps", m.sr_log.records.size()}});
}

ScenarioModel load_scenario_model(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    ScenarioModel m;
    try {
        m.config = TrainConfig::from_json(ckpt.metadata.at("train"));
        m.scenario = MissingScenario::for_target(parse_modality(ckpt.metadata.at("scenario").get<std::string>()));
    } catch (const json::exception& e) {
        throw DataError("checkpoint metadata is incomplete (" + std::string(e.what()) + "): " + path.string());
    }
    m.model = TranslationModel(m.config.net);
    load_params(m.model, path);
    m.model->eval();
    return m;
}

std::vector<ScenarioRun> train_all_scenarios(const TrainConfig& base, SliceDataset& dataset,
                                             const std::filesystem::path& out_dir, const std::vector<Modality>& targets) {
    std::vector<ScenarioRun> runs;
    for (Modality target : targets) {
        ScenarioRun run;
        run.scenario = MissingScenario::for_target(target);
        run.checkpoint = out_dir / ("mmsyn_" + run.scenario.tag() + ".ckpt");
        try {
            TrainConfig cfg = base;
            cfg.scenario = run.scenario;
            cfg.seed = base.seed + 101ULL * static_cast<std::uint64_t>(index_of(target) + 1);
            if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = out_dir;
            auto sr = pretrain_sr(cfg, dataset);
            sr.log.write_jsonl(out_dir / (run.scenario.tag() + "_sr_log.jsonl"));
            ScenarioModel model = train_translation(cfg, dataset, sr.net);
            model.sr_log = std::move(sr.log);
            model.log.write_jsonl(out_dir / (run.scenario.tag() + "_train_log.jsonl"));
            save_scenario_model(model, run.checkpoint);
            run.model = std::move(model);
        } catch (const std::exception& e) {
            run.error = e.what();
            run.failure = std::current_exception();
        }
        runs.push_back(std::move(run));
    }
    return runs;
}

FitReport fit_report(ScenarioModel& model, SliceDataset& dataset) {
    torch::NoGradGuard no_grad;
    model.model->eval();
    const torch::Device device(model.config.device);
    FitReport report;
    double ssim_sum = 0.0;
    std::size_t pred_count = 0, truth_count = 0, overlap = 0;
    for (std::size_t idx : dataset.manifest().tumor_entries()) {
        const auto sample = dataset.sample(idx);
        const Batch batch = make_batch({sample}, model.scenario, device);
        const auto out = model.model->generator->forward(batch.sources);
        const auto image = ((out.image + 1.0) * 0.5).clamp(0.0, 1.0).to(torch::kCPU).contiguous();
        const auto labels = out.seg_logits.argmax(1).to(torch::kCPU).contiguous();

        const auto& real = sample.image(model.scenario.target);
        Slice2D synth(real.height, real.width), truth(real.height, real.width);
        std::copy_n(image.data_ptr<float>(), synth.data.size(), synth.data.begin());
        for (std::size_t i = 0; i < truth.data.size(); ++i) truth.data[i] = 0.5f * (real.data[i] + 1.0f);

        const auto map = ssim_map(truth, synth);
        double sum = 0.0;
        std::size_t n = 0;
        const auto* lab = labels.data_ptr<std::int64_t>();
        for (std::size_t i = 0; i < map.data.size(); ++i) {
            if (real.data[i] > -1.0f) {  // brain foreground
                sum += map.data[i];
                ++n;
            }
            const bool p = lab[i] > 0, t = sample.mask.data[i] > 0;
            pred_count += p;
            truth_count += t;
            overlap += p && t;
        }
        ssim_sum += n > 0 ? sum / static_cast<double>(n) : 1.0;
        ++report.slices;
    }
    if (report.slices > 0) report.mean_ssim = ssim_sum / static_cast<double>(report.slices);
    report.tumor_dice = pred_count + truth_count == 0 ? 1.0
                                                      : 2.0 * static_cast<double>(overlap) /
                                                            static_cast<double>(pred_count + truth_count);
    return report;
}

}  // namespace mmsyn
