#include "mmsyn/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mmsyn/errors.hpp"

namespace mmsyn::losses {
namespace F = torch::nn::functional;

void LossWeights::validate() const {
    const std::pair<const char*, double> weights[] = {
        {"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"delta", delta}, {"eta", eta}};
    for (const auto& [name, value] : weights) {
        if (!(value >= 0.0) || !std::isfinite(value)) {
            throw std::invalid_argument(std::string(name) + ": loss weight must be a finite value >= 0");
        }
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau: temperature must be > 0");
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"adv", adv}, {"con", con}, {"seg", seg}, {"sr_decoder", sr_decoder},
            {"smr", smr}, {"mmr", mmr}, {"total", total}};
}

namespace {

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                                    c10::str(b.sizes()));
    }
}

}  // namespace

torch::Tensor contrastive_loss(const torch::Tensor& anchors, const torch::Tensor& positives, double tau) {
    require_same_shape(anchors, positives, "contrastive_loss");
    const auto q = anchors.dim() == 2 ? anchors.unsqueeze(0) : anchors;
    const auto k = positives.dim() == 2 ? positives.unsqueeze(0) : positives;
    if (q.dim() != 3) throw std::invalid_argument("contrastive_loss: expected [K, C] or [B, K, C]");
    if (q.size(1) < 2) throw std::invalid_argument("contrastive_loss: need K >= 2 rows so negatives exist");
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
    require_finite(q, "contrastive_loss");
    require_finite(k, "contrastive_loss");

    const auto qn = F::normalize(q, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
    const auto kn = F::normalize(k, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
    // logits[b, i, j] = q_i · k_j / τ; the diagonal holds the positives.
    const auto logits = torch::bmm(qn, kn.transpose(1, 2)) / tau;
    const auto log_prob = torch::log_softmax(logits, -1);
    return -log_prob.diagonal(0, 1, 2).mean();
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target) {
    const auto x = logits.dim() == 3 ? logits.unsqueeze(0) : logits;
    const auto t = target.dim() == 2 ? target.unsqueeze(0) : target;
    if (x.dim() != 4 || x.size(1) != 4) {
        throw std::invalid_argument("segmentation_loss: logits must have 4 class channels, got " + c10::str(logits.sizes()));
    }
    if (t.dim() != 3 || t.size(0) != x.size(0) || t.size(1) != x.size(2) || t.size(2) != x.size(3)) {
        throw std::invalid_argument("segmentation_loss: target shape " + c10::str(target.sizes()) +
                                    " does not match logits " + c10::str(logits.sizes()));
    }
    const auto labels = t.to(torch::kInt64);
    if (labels.numel() > 0 && (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() > 3)) {
        throw std::invalid_argument("segmentation_loss: labels must lie in {0,1,2,3}");
    }
    const auto log_p = torch::log_softmax(x, 1);
    return -log_p.gather(1, labels.unsqueeze(1)).mean();
}

torch::Tensor sr_decoder_loss(const std::vector<FeatureMap>& gen, const std::vector<FeatureMap>& sr, KlDirection direction) {
    if (gen.size() != sr.size() || gen.empty()) {
        throw std::invalid_argument("sr_decoder_loss: stage count mismatch (" + std::to_string(gen.size()) + " vs " +
                                    std::to_string(sr.size()) + ")");
    }
    torch::Tensor total;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        require_same_shape(gen[i].values, sr[i].values, "sr_decoder_loss");
        const auto log_g = torch::log_softmax(gen[i].values, 1);
        const auto log_s = torch::log_softmax(sr[i].values, 1);
        const auto& log_p = direction == KlDirection::SrToGen ? log_s : log_g;
        const auto& log_q = direction == KlDirection::SrToGen ? log_g : log_s;
        // KL(p ‖ q) per position, averaged over batch and spatial positions.
        const auto kl = (log_p.exp() * (log_p - log_q)).sum(1).mean();
        total = i == 0 ? kl : total + kl;
    }
    return total;
}

torch::Tensor smr_loss(const std::vector<torch::Tensor>& branch_feats, const torch::Tensor& sr_encoder_feat) {
    if (branch_feats.empty()) throw std::invalid_argument("smr_loss: no branch features");
    torch::Tensor total;
    for (std::size_t b = 0; b < branch_feats.size(); ++b) {
        require_same_shape(branch_feats[b], sr_encoder_feat, "smr_loss");
        const auto mse = (branch_feats[b] - sr_encoder_feat).pow(2).mean();
        total = b == 0 ? mse : total + mse;
    }
    return total / static_cast<double>(branch_feats.size());
}

torch::Tensor mmr_loss(const torch::Tensor& fusion_feat, const torch::Tensor& sr_bottleneck) {
    require_same_shape(fusion_feat, sr_bottleneck, "mmr_loss");
    return (fusion_feat - sr_bottleneck).pow(2).mean();
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& d_fake, AdversarialForm form) {
    require_finite(d_fake, "generator_adversarial_loss");
    if (form == AdversarialForm::LeastSquares) return (d_fake - 1.0).pow(2).mean();
    return F::softplus(-d_fake).mean();
}

torch::Tensor discriminator_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake, AdversarialForm form) {
    require_finite(d_real, "discriminator_adversarial_loss");
    require_finite(d_fake, "discriminator_adversarial_loss");
    if (form == AdversarialForm::LeastSquares) return (d_real - 1.0).pow(2).mean() + d_fake.pow(2).mean();
    return F::softplus(-d_real).mean() + F::softplus(d_fake).mean();
}

std::pair<torch::Tensor, torch::Tensor> adversarial_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                                           AdversarialForm form) {
    require_same_shape(d_real, d_fake, "adversarial_losses");
    return {generator_adversarial_loss(d_fake, form), discriminator_adversarial_loss(d_real, d_fake, form)};
}

torch::Tensor weighted_total(const LossTerms& t, const LossWeights& w) {
    return t.adv + w.alpha * t.con + w.beta * t.seg + w.gamma * t.sr_decoder + w.delta * t.smr + w.eta * t.mmr;
}

LossBreakdown total_generator_loss(const LossBreakdown& parts, const LossWeights& w) {
    const std::pair<const char*, double> named[] = {{"adv", parts.adv}, {"con", parts.con},
                                                    {"seg", parts.seg}, {"sr_decoder", parts.sr_decoder},
                                                    {"smr", parts.smr}, {"mmr", parts.mmr}};
    for (const auto& [name, value] : named) {
        if (!std::isfinite(value)) throw NumericalError(std::string("non-finite loss component '") + name + "'");
    }
    LossBreakdown out = parts;
    out.total = parts.adv + w.alpha * parts.con + w.beta * parts.seg + w.gamma * parts.sr_decoder +
                w.delta * parts.smr + w.eta * parts.mmr;
    return out;
}

}  // namespace mmsyn::losses
