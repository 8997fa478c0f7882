#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace mmsyn::qsattn {

struct AttentionOptions {
    bool scale = false;             // divide Q·Qᵀ by sqrt(C)
    bool detach_attention = false;  // stop gradients through the attention rows
};

// Row-softmax of Q·Qᵀ, Q the [HW, C] flattening of a feature map.
struct AttentionMatrix {
    torch::Tensor values;  // [B, HW, HW]
    std::int64_t channels = 0, height = 0, width = 0;
};

struct EntropyVector {
    torch::Tensor values;  // [B, HW], nats
};

struct QuerySelection {
    torch::Tensor indices;           // [B, K] int64, ascending entropy, ties by index
    torch::Tensor routed_attention;  // [B, K, HW], the attention rows at `indices`
    std::int64_t height = 0, width = 0;
};

// [B, C, H, W] (or [C, H, W]) -> [B, HW, C].
torch::Tensor flatten_positions(const torch::Tensor& f);

AttentionMatrix global_attention(const torch::Tensor& feature, const AttentionOptions& opts = {});

// -Σ_j A(i,j) log A(i,j); probabilities are clamped at 1e-12 inside the log.
EntropyVector row_entropy(const AttentionMatrix& a);

// Keeps the K lowest-entropy positions. K above HW selects every position.
// Throws std::invalid_argument for K < 1.
QuerySelection select_queries(const AttentionMatrix& a, const EntropyVector& h, std::int64_t k);

// routed_attention · Q_f -> [B, K, C]. The selection is computed from the
// source feature and applied unchanged to both source and generated maps.
torch::Tensor route_features(const QuerySelection& sel, const torch::Tensor& feature);

}  // namespace mmsyn::qsattn
