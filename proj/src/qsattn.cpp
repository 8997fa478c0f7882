#include "mmsyn/qsattn.hpp"

#include <cmath>
#include <stdexcept>

namespace mmsyn::qsattn {
namespace {

torch::Tensor as_batched(const torch::Tensor& f) {
    if (f.dim() == 3) return f.unsqueeze(0);
    if (f.dim() != 4) throw std::invalid_argument("feature map must be [C,H,W] or [B,C,H,W], got " + c10::str(f.sizes()));
    return f;
}

}  // namespace

torch::Tensor flatten_positions(const torch::Tensor& f) {
    const auto b = as_batched(f);
    return b.flatten(2).transpose(1, 2);
}

AttentionMatrix global_attention(const torch::Tensor& feature, const AttentionOptions& opts) {
    const auto f = as_batched(feature);
    if (!torch::isfinite(f).all().item<bool>()) throw std::invalid_argument("global_attention: non-finite feature");
    auto q = flatten_positions(f);
    if (opts.detach_attention) q = q.detach();
    auto logits = torch::bmm(q, q.transpose(1, 2));
    if (opts.scale) logits = logits / std::sqrt(static_cast<double>(f.size(1)));
    return {torch::softmax(logits, -1), f.size(1), f.size(2), f.size(3)};
}

EntropyVector row_entropy(const AttentionMatrix& a) {
    const auto& p = a.values;
    return {-(p * torch::log(p.clamp_min(1e-12))).sum(-1)};
}

QuerySelection select_queries(const AttentionMatrix& a, const EntropyVector& h, std::int64_t k) {
    if (k < 1) throw std::invalid_argument("select_queries: K must be at least 1, got " + std::to_string(k));
    const auto hw = h.values.size(-1);
    k = std::min(k, hw);
    // Stable ascending sort keeps the smaller spatial index first among ties.
    auto order = std::get<1>(torch::sort(h.values.detach(), /*stable=*/true, /*dim=*/-1, /*descending=*/false));
    auto indices = order.narrow(-1, 0, k).contiguous();
    auto gather_index = indices.unsqueeze(-1).expand({indices.size(0), k, a.values.size(-1)});
    return {indices, a.values.gather(1, gather_index), a.height, a.width};
}

torch::Tensor route_features(const QuerySelection& sel, const torch::Tensor& feature) {
    const auto f = as_batched(feature);
    if (f.size(2) != sel.height || f.size(3) != sel.width || f.size(0) != sel.routed_attention.size(0)) {
        throw std::invalid_argument("route_features: feature " + c10::str(f.sizes()) +
                                    " does not match the selection's source shape");
    }
    return torch::bmm(sel.routed_attention, flatten_positions(f));
}

}  // namespace mmsyn::qsattn
