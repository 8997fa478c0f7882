#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "mmsyn/nets.hpp"

namespace mmsyn::losses {

enum class AdversarialForm { NonSaturating, LeastSquares };
// SrToGen is KL(SR ‖ G): generator decoder features act as the log-probability input.
enum class KlDirection { SrToGen, GenToSr };

struct LossWeights {
    double alpha = 0.1;   // contrastive
    double beta = 0.05;   // segmentation
    double gamma = 0.1;   // decoder self-representation (KL)
    double delta = 0.1;   // single-modal encoder self-representation (L2)
    double eta = 0.1;     // multi-modal fusion self-representation (L2)
    double tau = 0.07;    // contrastive temperature

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

// Unweighted components; `total` is the weighted objective.
struct LossBreakdown {
    double adv = 0, con = 0, seg = 0, sr_decoder = 0, smr = 0, mmr = 0, total = 0;

    nlohmann::json to_json() const;
};

// InfoNCE over K rows. Row i of `anchors` is pulled toward row i of
// `positives` and pushed from every other row of `positives`. Rows are
// L2-normalized first. Accepts [K, C] or [B, K, C]; averages over B and K.
torch::Tensor contrastive_loss(const torch::Tensor& anchors, const torch::Tensor& positives, double tau);

// Mean per-pixel cross-entropy of softmax(logits) against integer labels in
// {0..3}. logits [4, H, W] or [B, 4, H, W]; target [H, W] or [B, H, W].
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& target);

// Sum over stages of the per-position mean KL between channel-softmax
// distributions of the two decoders' features.
torch::Tensor sr_decoder_loss(const std::vector<FeatureMap>& gen_decoder_feats,
                              const std::vector<FeatureMap>& sr_decoder_feats,
                              KlDirection direction = KlDirection::SrToGen);

// Mean over the branches of MSE(branch, sr_encoder_feat).
torch::Tensor smr_loss(const std::vector<torch::Tensor>& branch_feats, const torch::Tensor& sr_encoder_feat);

torch::Tensor mmr_loss(const torch::Tensor& fusion_feat, const torch::Tensor& sr_bottleneck);

torch::Tensor generator_adversarial_loss(const torch::Tensor& d_fake, AdversarialForm form = AdversarialForm::NonSaturating);
torch::Tensor discriminator_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                             AdversarialForm form = AdversarialForm::NonSaturating);
// (g_adv, d_adv) from one pair of logit maps.
std::pair<torch::Tensor, torch::Tensor> adversarial_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                                           AdversarialForm form = AdversarialForm::NonSaturating);

struct LossTerms {
    torch::Tensor adv, con, seg, sr_decoder, smr, mmr;
};

// adv + α·con + β·seg + γ·sr_decoder + δ·smr + η·mmr, differentiable.
torch::Tensor weighted_total(const LossTerms& terms, const LossWeights& w);

// Same sum on plain scalars. Throws NumericalError naming the first non-finite component.
LossBreakdown total_generator_loss(const LossBreakdown& parts, const LossWeights& w);

}  // namespace mmsyn::losses
