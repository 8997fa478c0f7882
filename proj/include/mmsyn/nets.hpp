#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace mmsyn {

// Architecture hyperparameters. Everything that changes tensor shapes or the
// parameter set belongs here, because the fingerprint guards checkpoints.
struct NetConfig {
    int base_width = 32;     // first encoder level; doubles per level
    int levels = 4;          // stride-2 encoder blocks (total downsampling 2^levels)
    int disc_width = 64;
    int disc_layers = 3;     // stride-2 layers of the patch discriminator
    int attention_reduction = 8;
    bool shared_branch_attention = false;  // one attention module for all source branches

    int top_width() const { return base_width << (levels - 1); }
    std::int64_t downsampling() const { return std::int64_t{1} << levels; }

    nlohmann::json to_json() const;
    static NetConfig from_json(const nlohmann::json& j);
    // Hex FNV-1a digest of the canonical JSON form.
    std::string fingerprint() const;
};

// Activation tensor [B, C, H, W] tagged with the network stage it came from.
struct FeatureMap {
    torch::Tensor values;
    std::string stage;
};

struct GeneratorOutput {
    torch::Tensor image;       // [B, 1, H, W], tanh-bounded
    torch::Tensor seg_logits;  // [B, 4, H, W]
    FeatureMap fusion_feature;            // after multi-modal channel attention, [B, 3C, h, w]
    FeatureMap fusion_post_conv_feature;  // after the fusion 1x1 convolution, [B, C, h, w]
    // Per source branch: one map per encoder level; the last is the attended output.
    std::vector<std::vector<FeatureMap>> encoder_features;
    std::vector<FeatureMap> decoder_features;  // image decoder, one per level
};

struct FusedFeatures {
    FeatureMap fusion_feature;
    FeatureMap fusion_post_conv_feature;
};

struct SROutput {
    torch::Tensor recon;                       // [B, 1, H, W]
    std::vector<FeatureMap> encoder_features;  // per level; the last is the attended output
    FeatureMap bottleneck;
    std::vector<FeatureMap> decoder_features;
};

class ConvBlockImpl : public torch::nn::Module {
public:
    ConvBlockImpl(int in_channels, int out_channels, int kernel, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv{nullptr};
    torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(ConvBlock);

// Squeeze-and-excitation style channel reweighting.
class ChannelAttentionImpl : public torch::nn::Module {
public:
    ChannelAttentionImpl(int channels, int reduction);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear squeeze{nullptr};
    torch::nn::Linear excite{nullptr};
};
TORCH_MODULE(ChannelAttention);

class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(int in_channels, const NetConfig& cfg);
    std::vector<torch::Tensor> forward(const torch::Tensor& x);

private:
    torch::nn::ModuleList blocks;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(const NetConfig& cfg, int out_channels);
    // Returns the per-level features followed by the head output (pre-activation).
    std::vector<torch::Tensor> forward(const torch::Tensor& x);

private:
    torch::nn::ModuleList blocks;
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Decoder);

// Concatenation, channel attention, then a 1x1 convolution back to C channels.
class FusionImpl : public torch::nn::Module {
public:
    explicit FusionImpl(const NetConfig& cfg);
    FusedFeatures forward(const std::vector<torch::Tensor>& branches);

private:
    ChannelAttention attention{nullptr};
    ConvBlock project{nullptr};
};
TORCH_MODULE(Fusion);

class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const NetConfig& cfg);

    // sources: [B, 3, H, W] in scenario source order.
    GeneratorOutput forward(const torch::Tensor& sources);
    // Convenience for three [1, H, W] or [B, 1, H, W] images.
    GeneratorOutput forward(const std::vector<torch::Tensor>& sources);

    // Runs a synthesized image through the dedicated target branch, replicated
    // into all three fusion slots, so it lands in the same fused feature space
    // as the real sources.
    FusedFeatures encode_generated(const torch::Tensor& image);

    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    torch::nn::ModuleList branches;
    torch::nn::ModuleList branch_attention;
    Encoder target_encoder{nullptr};
    ChannelAttention target_attention{nullptr};
    Fusion fusion{nullptr};
    Decoder image_decoder{nullptr};
    Decoder seg_decoder{nullptr};
};
TORCH_MODULE(Generator);

// Self-representation autoencoder over the target modality. Shapes mirror a
// single generator branch, the fusion projection and the image decoder.
class SRNetImpl : public torch::nn::Module {
public:
    explicit SRNetImpl(const NetConfig& cfg);
    SROutput forward(const torch::Tensor& target);

private:
    NetConfig cfg_;
    Encoder encoder{nullptr};
    ChannelAttention attention{nullptr};
    ConvBlock bottleneck{nullptr};
    Decoder decoder{nullptr};
};
TORCH_MODULE(SRNet);

// Patch discriminator with a 70x70 receptive field at the default depth.
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& image);

private:
    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Discriminator);

// Every trainable network of one scenario. Parameter names are stable and
// prefixed "generator.", "discriminator." and "sr.".
class TranslationModelImpl : public torch::nn::Module {
public:
    explicit TranslationModelImpl(const NetConfig& cfg);

    Generator generator{nullptr};
    Discriminator discriminator{nullptr};
    SRNet sr{nullptr};

    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
};
TORCH_MODULE(TranslationModel);

// Throws std::invalid_argument when the spatial size is not a multiple of the
// total downsampling factor or the tensor rank is wrong.
void check_input_shape(const torch::Tensor& x, std::int64_t channels, const NetConfig& cfg, const char* who);

}  // namespace mmsyn
