#include "doctest_torch.hpp"

#include <fstream>

#include "mmsyn/checkpoint.hpp"
#include "mmsyn/errors.hpp"
#include "mmsyn/nets.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mmsyn;

namespace {

NetConfig small_config() {
    NetConfig c;
    c.base_width = 4;
    c.levels = 2;
    c.disc_width = 4;
    c.disc_layers = 2;
    c.attention_reduction = 2;
    return c;
}

bool finite_and_nonzero(const torch::Tensor& g) {
    return g.defined() && torch::isfinite(g).all().item<bool>() && g.abs().sum().item<double>() > 0.0;
}

}  // namespace

TEST_CASE("generator output shapes follow the input size") {
    torch::manual_seed(0);
    Generator g(small_config());
    for (std::int64_t hw : {8, 16, 24}) {
        const auto out = g->forward(torch::randn({2, 3, hw, hw + 8}));
        CHECK(out.image.sizes() == torch::IntArrayRef{2, 1, hw, hw + 8});
        CHECK(out.seg_logits.sizes() == torch::IntArrayRef{2, 4, hw, hw + 8});
        CHECK(out.fusion_feature.values.size(1) == 3 * small_config().top_width());
        CHECK(out.fusion_post_conv_feature.values.size(1) == small_config().top_width());
        CHECK(out.fusion_feature.values.size(2) == hw / 4);
        CHECK(out.encoder_features.size() == 3);
    }
    const auto single = g->forward(std::vector<torch::Tensor>{torch::randn({1, 8, 8}), torch::randn({1, 8, 8}),
                                                              torch::randn({1, 8, 8})});
    CHECK(single.image.sizes() == torch::IntArrayRef{1, 1, 8, 8});
    CHECK_THROWS_AS(g->forward(torch::randn({1, 3, 10, 8})), std::invalid_argument);
    CHECK_THROWS_AS(g->forward(torch::randn({1, 2, 8, 8})), std::invalid_argument);
}

TEST_CASE("generator and SR outputs stay within [-1, 1]") {
    torch::manual_seed(1);
    const auto cfg = small_config();
    Generator g(cfg);
    SRNet sr(cfg);
    const auto x = torch::randn({2, 3, 16, 16}) * 50.0;
    const auto img = g->forward(x).image;
    CHECK(img.min().item<float>() >= -1.0f);
    CHECK(img.max().item<float>() <= 1.0f);
    const auto rec = sr->forward(torch::randn({2, 1, 16, 16}) * 50.0).recon;
    CHECK(rec.min().item<float>() >= -1.0f);
    CHECK(rec.max().item<float>() <= 1.0f);
}

TEST_CASE("every exposed feature is differentiable with respect to the input") {
    torch::manual_seed(2);
    Generator g(small_config());
    auto x = torch::randn({1, 3, 16, 16}).set_requires_grad(true);
    std::vector<std::pair<std::string, std::function<torch::Tensor(const GeneratorOutput&)>>> picks = {
        {"image", [](const GeneratorOutput& o) { return o.image; }},
        {"seg", [](const GeneratorOutput& o) { return o.seg_logits; }},
        {"fusion", [](const GeneratorOutput& o) { return o.fusion_feature.values; }},
        {"fusion_post", [](const GeneratorOutput& o) { return o.fusion_post_conv_feature.values; }},
        {"branch", [](const GeneratorOutput& o) { return o.encoder_features[1].back().values; }},
        {"decoder", [](const GeneratorOutput& o) { return o.decoder_features.front().values; }},
    };
    for (const auto& [name, pick] : picks) {
        CAPTURE(name);
        x.mutable_grad() = torch::Tensor();
        pick(g->forward(x)).sum().backward();
        CHECK(finite_and_nonzero(x.grad()));
    }
    auto y = torch::randn({1, 1, 16, 16}).set_requires_grad(true);
    g->encode_generated(y).fusion_feature.values.sum().backward();
    CHECK(finite_and_nonzero(y.grad()));

    SRNet sr(small_config());
    auto t = torch::randn({1, 1, 16, 16}).set_requires_grad(true);
    const auto out = sr->forward(t);
    (out.bottleneck.values.sum() + out.encoder_features.back().values.sum() + out.decoder_features.back().values.sum())
        .backward();
    CHECK(finite_and_nonzero(t.grad()));
}

TEST_CASE("swapping two source modalities changes the fused feature") {
    torch::manual_seed(3);
    Generator g(small_config());
    const auto x = torch::randn({1, 3, 16, 16});
    const auto swapped = torch::stack({x[0][1], x[0][0], x[0][2]}).unsqueeze(0);
    const auto a = g->forward(x).fusion_feature.values;
    const auto b = g->forward(swapped).fusion_feature.values;
    CHECK(!torch::allclose(a, b, 1e-4, 1e-5));
}

TEST_CASE("the generated image lands in the fused feature space") {
    torch::manual_seed(4);
    Generator g(small_config());
    const auto out = g->forward(torch::randn({2, 3, 16, 16}));
    const auto fake = g->encode_generated(out.image);
    CHECK(fake.fusion_feature.values.sizes() == out.fusion_feature.values.sizes());
    CHECK(fake.fusion_post_conv_feature.values.sizes() == out.fusion_post_conv_feature.values.sizes());
}

TEST_CASE("SR features align with the generator features they constrain") {
    torch::manual_seed(5);
    const auto cfg = small_config();
    Generator g(cfg);
    SRNet sr(cfg);
    const auto go = g->forward(torch::randn({1, 3, 16, 16}));
    const auto so = sr->forward(torch::randn({1, 1, 16, 16}));
    CHECK(so.encoder_features.back().values.sizes() == go.encoder_features[0].back().values.sizes());
    CHECK(so.bottleneck.values.sizes() == go.fusion_post_conv_feature.values.sizes());
    REQUIRE(so.decoder_features.size() == go.decoder_features.size());
    for (std::size_t i = 0; i < so.decoder_features.size(); ++i)
        CHECK(so.decoder_features[i].values.sizes() == go.decoder_features[i].values.sizes());
}

TEST_CASE("patch discriminator: logit map shape and double-precision gradient check") {
    NetConfig cfg;  // default depth: 64x64 input gives a 6x6 map
    torch::manual_seed(6);
    Discriminator d(cfg);
    CHECK(d->forward(torch::randn({2, 1, 64, 64})).sizes() == torch::IntArrayRef{2, 1, 6, 6});

    auto small = small_config();
    torch::manual_seed(7);
    Discriminator dd(small);
    dd->to(torch::kFloat64);
    const auto w = torch::randn({1, 1, 2, 2}, torch::kFloat64);
    auto f = [&](const torch::Tensor& x) { return (dd->forward(x.reshape({1, 1, 16, 16})) * w).sum(); };
    const auto x0 = torch::randn({256}, torch::kFloat64);
    CHECK(oracle::gradient_error(f, x0) < 1e-4);
}

TEST_CASE("fingerprint identifies the architecture") {
    NetConfig a, b;
    CHECK(a.fingerprint() == b.fingerprint());
    b.base_width = 16;
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(NetConfig::from_json(b.to_json()).fingerprint() == b.fingerprint());
}

TEST_CASE("checkpoint save/load is bit-exact") {
    testutil::TempDir dir("ckpt");
    torch::manual_seed(8);
    TranslationModel m(small_config());
    save_params(m, dir / "m.ckpt", {{"note", "x"}});
    torch::manual_seed(9);
    TranslationModel n(small_config());
    const auto meta = load_params(n, dir / "m.ckpt");
    CHECK(meta.at("note") == "x");
    const auto sa = named_state(*m), sb = named_state(*n);
    REQUIRE(sa.size() == sb.size());
    for (const auto& [name, t] : sa) {
        CAPTURE(name);
        CHECK(torch::equal(t, sb.at(name)));
    }
    CHECK(sa.count("generator.fusion.project.conv.weight") + sa.count("sr.bottleneck.conv.weight") >= 1);
}

TEST_CASE("corrupt, truncated or mismatched checkpoints are rejected") {
    testutil::TempDir dir("ckpt-bad");
    TranslationModel m(small_config());
    save_params(m, dir / "m.ckpt");
    const auto bytes = testutil::read_file(dir / "m.ckpt");

    std::ofstream(dir / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
    CHECK_THROWS_AS(read_checkpoint(dir / "cut.ckpt"), DataError);

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x01;
    std::ofstream(dir / "flip.ckpt", std::ios::binary).write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
    CHECK_THROWS_AS(read_checkpoint(dir / "flip.ckpt"), DataError);

    auto other = small_config();
    other.base_width = 8;
    TranslationModel wrong(other);
    try {
        load_params(wrong, dir / "m.ckpt");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(small_config().fingerprint()) != std::string::npos);
        CHECK(msg.find(other.fingerprint()) != std::string::npos);
    }
}
