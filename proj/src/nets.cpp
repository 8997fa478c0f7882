#include "mmsyn/nets.hpp"

#include <stdexcept>

#include "mmsyn/digest.hpp"

namespace mmsyn {

nlohmann::json NetConfig::to_json() const {
    return {{"base_width", base_width},
            {"levels", levels},
            {"disc_width", disc_width},
            {"disc_layers", disc_layers},
            {"attention_reduction", attention_reduction},
            {"shared_branch_attention", shared_branch_attention}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
    NetConfig c;
    c.base_width = j.value("base_width", c.base_width);
    c.levels = j.value("levels", c.levels);
    c.disc_width = j.value("disc_width", c.disc_width);
    c.disc_layers = j.value("disc_layers", c.disc_layers);
    c.attention_reduction = j.value("attention_reduction", c.attention_reduction);
    c.shared_branch_attention = j.value("shared_branch_attention", c.shared_branch_attention);
    return c;
}

std::string NetConfig::fingerprint() const { return fnv1a_hex(to_json().dump()); }

void check_input_shape(const torch::Tensor& x, std::int64_t channels, const NetConfig& cfg, const char* who) {
    if (x.dim() != 4 || x.size(1) != channels) {
        throw std::invalid_argument(std::string(who) + ": expected [B, " + std::to_string(channels) +
                                    ", H, W] input, got " + c10::str(x.sizes()));
    }
    const auto f = cfg.downsampling();
    if (x.size(2) % f != 0 || x.size(3) % f != 0) {
        throw std::invalid_argument(std::string(who) + ": spatial size " + std::to_string(x.size(2)) + "x" +
                                    std::to_string(x.size(3)) + " is not divisible by the downsampling factor " +
                                    std::to_string(f));
    }
}

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels, int kernel, int stride) {
    conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, kernel)
                                                         .stride(stride)
                                                         .padding(kernel / 2)
                                                         .bias(false)));
    norm = register_module("norm", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out_channels).affine(true)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
    return torch::leaky_relu(norm(conv(x)), 0.2);
}

ChannelAttentionImpl::ChannelAttentionImpl(int channels, int reduction) {
    const int hidden = std::max(4, channels / std::max(1, reduction));
    squeeze = register_module("squeeze", torch::nn::Linear(channels, hidden));
    excite = register_module("excite", torch::nn::Linear(hidden, channels));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
    auto w = torch::sigmoid(excite(torch::relu(squeeze(x.mean({2, 3})))));
    return x * w.unsqueeze(-1).unsqueeze(-1);
}

EncoderImpl::EncoderImpl(int in_channels, const NetConfig& cfg) {
    int c = in_channels;
    for (int l = 0; l < cfg.levels; ++l) {
        const int out = cfg.base_width << l;
        blocks->push_back(ConvBlock(c, out, 3, 2));
        c = out;
    }
    register_module("blocks", blocks);
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> levels;
    auto h = x;
    for (const auto& block : *blocks) {
        h = block->as<ConvBlock>()->forward(h);
        levels.push_back(h);
    }
    return levels;
}

DecoderImpl::DecoderImpl(const NetConfig& cfg, int out_channels) {
    for (int l = cfg.levels - 1; l >= 0; --l) {
        const int in = cfg.base_width << l;
        const int out = cfg.base_width << std::max(0, l - 1);
        blocks->push_back(ConvBlock(in, out, 3, 1));
    }
    register_module("blocks", blocks);
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.base_width, out_channels, 3).padding(1)));
}

std::vector<torch::Tensor> DecoderImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = x;
    for (const auto& block : *blocks) {
        h = torch::nn::functional::interpolate(
            h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
        h = block->as<ConvBlock>()->forward(h);
        out.push_back(h);
    }
    out.push_back(head(h));
    return out;
}

FusionImpl::FusionImpl(const NetConfig& cfg) {
    const int c = cfg.top_width();
    attention = register_module("attention", ChannelAttention(3 * c, cfg.attention_reduction));
    project = register_module("project", ConvBlock(3 * c, c, 1, 1));
}

FusedFeatures FusionImpl::forward(const std::vector<torch::Tensor>& branches) {
    auto fused = attention(torch::cat(branches, 1));
    auto post = project(fused);
    return {{fused, "fusion"}, {post, "fusion_post_conv"}};
}

GeneratorImpl::GeneratorImpl(const NetConfig& cfg) : cfg_(cfg) {
    const int c = cfg.top_width();
    for (int b = 0; b < 3; ++b) branches->push_back(Encoder(1, cfg));
    const int n_attention = cfg.shared_branch_attention ? 1 : 3;
    for (int b = 0; b < n_attention; ++b) branch_attention->push_back(ChannelAttention(c, cfg.attention_reduction));
    register_module("branches", branches);
    register_module("branch_attention", branch_attention);
    target_encoder = register_module("target_encoder", Encoder(1, cfg));
    target_attention = register_module("target_attention", ChannelAttention(c, cfg.attention_reduction));
    fusion = register_module("fusion", Fusion(cfg));
    image_decoder = register_module("image_decoder", Decoder(cfg, 1));
    seg_decoder = register_module("seg_decoder", Decoder(cfg, 4));
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& sources) {
    if (sources.dim() != 4 || sources.size(1) != 3) {
        throw std::invalid_argument("generator: expected exactly 3 source images as [B, 3, H, W], got " +
                                    c10::str(sources.sizes()));
    }
    check_input_shape(sources, 3, cfg_, "generator");

    GeneratorOutput out;
    std::vector<torch::Tensor> finals;
    for (int b = 0; b < 3; ++b) {
        auto levels = branches[b]->as<Encoder>()->forward(sources.narrow(1, b, 1));
        auto attention = branch_attention[cfg_.shared_branch_attention ? 0 : b]->as<ChannelAttention>();
        std::vector<FeatureMap> maps;
        for (std::size_t l = 0; l < levels.size(); ++l)
            maps.push_back({levels[l], "branch" + std::to_string(b) + ".level" + std::to_string(l)});
        auto attended = attention->forward(levels.back());
        maps.push_back({attended, "branch" + std::to_string(b) + ".attention"});
        finals.push_back(attended);
        out.encoder_features.push_back(std::move(maps));
    }

    auto fused = fusion(finals);
    out.fusion_feature = fused.fusion_feature;
    out.fusion_post_conv_feature = fused.fusion_post_conv_feature;

    auto img = image_decoder(fused.fusion_post_conv_feature.values);
    out.image = torch::tanh(img.back());
    img.pop_back();
    for (std::size_t l = 0; l < img.size(); ++l) out.decoder_features.push_back({img[l], "decoder.level" + std::to_string(l)});

    out.seg_logits = seg_decoder(fused.fusion_post_conv_feature.values).back();
    return out;
}

GeneratorOutput GeneratorImpl::forward(const std::vector<torch::Tensor>& sources) {
    if (sources.size() != 3) {
        throw std::invalid_argument("generator: expected exactly 3 source images, got " + std::to_string(sources.size()));
    }
    std::vector<torch::Tensor> batched;
    for (const auto& s : sources) {
        auto t = s.dim() == 3 ? s.unsqueeze(0) : s;
        if (t.dim() != 4 || t.size(1) != 1) {
            throw std::invalid_argument("generator: each source must be [1, H, W] or [B, 1, H, W], got " +
                                        c10::str(s.sizes()));
        }
        if (!batched.empty() && t.sizes() != batched.front().sizes()) {
            throw std::invalid_argument("generator: source shapes differ: " + c10::str(batched.front().sizes()) +
                                        " vs " + c10::str(t.sizes()));
        }
        batched.push_back(t);
    }
    return forward(torch::cat(batched, 1));
}

FusedFeatures GeneratorImpl::encode_generated(const torch::Tensor& image) {
    check_input_shape(image, 1, cfg_, "generator.encode_generated");
    auto attended = target_attention(target_encoder->forward(image).back());
    return fusion->forward(std::vector<torch::Tensor>{attended, attended, attended});
}

SRNetImpl::SRNetImpl(const NetConfig& cfg) : cfg_(cfg) {
    const int c = cfg.top_width();
    encoder = register_module("encoder", Encoder(1, cfg));
    attention = register_module("attention", ChannelAttention(c, cfg.attention_reduction));
    bottleneck = register_module("bottleneck", ConvBlock(c, c, 1, 1));
    decoder = register_module("decoder", Decoder(cfg, 1));
}

SROutput SRNetImpl::forward(const torch::Tensor& target) {
    check_input_shape(target, 1, cfg_, "sr");
    SROutput out;
    auto levels = encoder(target);
    for (std::size_t l = 0; l < levels.size(); ++l) out.encoder_features.push_back({levels[l], "sr.level" + std::to_string(l)});
    auto attended = attention(levels.back());
    out.encoder_features.push_back({attended, "sr.attention"});
    out.bottleneck = {bottleneck(attended), "sr.bottleneck"};
    auto dec = decoder(out.bottleneck.values);
    out.recon = torch::tanh(dec.back());
    dec.pop_back();
    for (std::size_t l = 0; l < dec.size(); ++l) out.decoder_features.push_back({dec[l], "sr.decoder.level" + std::to_string(l)});
    return out;
}

DiscriminatorImpl::DiscriminatorImpl(const NetConfig& cfg) {
    namespace nn = torch::nn;
    nn::Sequential seq;
    const int w = cfg.disc_width;
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(1, w, 4).stride(2).padding(1)));
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    int c = w;
    for (int n = 1; n <= cfg.disc_layers; ++n) {
        const int out = w * std::min(1 << n, 8);
        const int stride = n < cfg.disc_layers ? 2 : 1;
        seq->push_back(nn::Conv2d(nn::Conv2dOptions(c, out, 4).stride(stride).padding(1).bias(false)));
        seq->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)));
        seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
        c = out;
    }
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(c, 1, 4).stride(1).padding(1)));
    body = register_module("body", seq);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 1) {
        throw std::invalid_argument("discriminator: expected [B, 1, H, W], got " + c10::str(image.sizes()));
    }
    return body->forward(image);
}

TranslationModelImpl::TranslationModelImpl(const NetConfig& cfg) : cfg_(cfg) {
    generator = register_module("generator", Generator(cfg));
    discriminator = register_module("discriminator", Discriminator(cfg));
    sr = register_module("sr", SRNet(cfg));
}

}  // namespace mmsyn
