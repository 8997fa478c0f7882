#include "doctest_torch.hpp"

#include <cmath>
#include <limits>

#include "mmsyn/errors.hpp"
#include "mmsyn/losses.hpp"
#include "oracles.hpp"

using namespace mmsyn;
using namespace mmsyn::losses;

namespace {

torch::Tensor randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
    torch::manual_seed(seed);
    return torch::randn(shape, torch::kFloat64);
}

std::vector<FeatureMap> maps(std::initializer_list<torch::Tensor> ts) {
    std::vector<FeatureMap> out;
    for (const auto& t : ts) out.push_back({t, "stage"});
    return out;
}

}  // namespace

TEST_CASE("contrastive loss equals ln N when every similarity coincides") {
    for (std::int64_t k : {2, 3, 17, 256}) {
        const auto same = torch::ones({k, 8}, torch::kFloat64);
        CHECK(std::abs(contrastive_loss(same, same, 0.07).item<double>() - std::log(static_cast<double>(k))) < 1e-6);
    }
    CHECK_THROWS(contrastive_loss(torch::ones({1, 4}), torch::ones({1, 4}), 0.07));
    CHECK_THROWS(contrastive_loss(torch::ones({2, 4}), torch::ones({3, 4}), 0.07));
}

TEST_CASE("contrastive loss matches the explicit InfoNCE loop") {
    for (double tau : {0.07, 0.5}) {
        const auto a = randn({2, 5, 4}, 1), p = randn({2, 5, 4}, 2);
        const double got = contrastive_loss(a, p, tau).item<double>();
        double want = 0.0;
        for (int b = 0; b < 2; ++b) want += oracle::info_nce(oracle::to_vec(a[b]), oracle::to_vec(p[b]), 5, 4, tau);
        CHECK(got == doctest::Approx(want / 2).epsilon(1e-12));
        CHECK(got > 0.0);
    }
}

TEST_CASE("contrastive loss decreases strictly as the positive similarity grows with negatives fixed") {
    // p_0 = e0, p_1 = e2, p_2 = e3; a_0 rotates from e1 toward e0, so its
    // similarity to p_0 rises while its similarities to p_1, p_2 stay 0.
    auto p = torch::zeros({3, 4}, torch::kFloat64);
    p[0][0] = 1;
    p[1][2] = 1;
    p[2][3] = 1;
    auto a = torch::randn({3, 4}, torch::kFloat64);
    double prev = std::numeric_limits<double>::infinity();
    for (double theta = 1.5; theta >= 0.0; theta -= 0.25) {
        a[0] = torch::tensor({std::cos(theta), std::sin(theta), 0.0, 0.0}, torch::kFloat64);
        const double now = contrastive_loss(a, p, 0.1).item<double>();
        CHECK(now < prev);
        CHECK(now > 0.0);
        prev = now;
    }
}

TEST_CASE("segmentation cross-entropy: ln 4 on uniform logits, oracle match, zero only when saturated-correct") {
    const auto uniform = torch::zeros({2, 4, 3, 3}, torch::kFloat64);
    const auto labels = torch::randint(0, 4, {2, 3, 3}, torch::kInt64);
    CHECK(std::abs(segmentation_loss(uniform, labels).item<double>() - std::log(4.0)) < 1e-6);

    const auto logits = randn({1, 4, 2, 3}, 5);
    const auto target = torch::tensor({0, 3, 1, 2, 2, 0}, torch::kInt64).reshape({1, 2, 3});
    std::vector<std::int64_t> lab{0, 3, 1, 2, 2, 0};
    CHECK(segmentation_loss(logits, target).item<double>() ==
          doctest::Approx(oracle::cross_entropy(oracle::to_vec(logits[0]), lab, 4)).epsilon(1e-12));
    CHECK(segmentation_loss(logits, target).item<double>() >= 0.0);

    const auto onehot = torch::one_hot(target, 4).permute({0, 3, 1, 2}).to(torch::kFloat64) * 60.0;
    CHECK(segmentation_loss(onehot, target).item<double>() < 1e-20);
    CHECK_THROWS(segmentation_loss(logits, torch::full({1, 2, 3}, 4, torch::kInt64)));
    CHECK_THROWS(segmentation_loss(randn({1, 3, 2, 3}, 1), target));
}

TEST_CASE("decoder KL matches the oracle in both directions and vanishes on identical inputs") {
    const auto g1 = randn({1, 3, 2, 2}, 6), s1 = randn({1, 3, 2, 2}, 7);
    const auto g2 = randn({1, 2, 4, 4}, 8), s2 = randn({1, 2, 4, 4}, 9);
    const auto gen = maps({g1, g2}), sr = maps({s1, s2});
    const double sr_to_gen = sr_decoder_loss(gen, sr, KlDirection::SrToGen).item<double>();
    const double gen_to_sr = sr_decoder_loss(gen, sr, KlDirection::GenToSr).item<double>();
    const double want_sg = oracle::kl_channels(oracle::to_vec(s1[0]), oracle::to_vec(g1[0]), 3) +
                           oracle::kl_channels(oracle::to_vec(s2[0]), oracle::to_vec(g2[0]), 2);
    const double want_gs = oracle::kl_channels(oracle::to_vec(g1[0]), oracle::to_vec(s1[0]), 3) +
                           oracle::kl_channels(oracle::to_vec(g2[0]), oracle::to_vec(s2[0]), 2);
    CHECK(sr_to_gen == doctest::Approx(want_sg).epsilon(1e-12));
    CHECK(gen_to_sr == doctest::Approx(want_gs).epsilon(1e-12));
    CHECK(sr_to_gen > 0.0);
    CHECK(sr_decoder_loss(gen, gen).item<double>() == 0.0);
    CHECK_THROWS(sr_decoder_loss(gen, maps({s1})));
}

TEST_CASE("feature-matching MSE terms are non-negative, symmetric and zero iff equal") {
    const auto a = randn({2, 4, 3, 3}, 10), b = randn({2, 4, 3, 3}, 11), c = randn({2, 4, 3, 3}, 12);
    CHECK(mmr_loss(a, b).item<double>() == doctest::Approx(oracle::mse(oracle::to_vec(a), oracle::to_vec(b))).epsilon(1e-12));
    CHECK(mmr_loss(a, b).item<double>() == mmr_loss(b, a).item<double>());
    CHECK(mmr_loss(a, a).item<double>() == 0.0);
    CHECK(smr_loss({a, a, a}, a).item<double>() == 0.0);
    const double want =
        (oracle::mse(oracle::to_vec(a), oracle::to_vec(c)) + oracle::mse(oracle::to_vec(b), oracle::to_vec(c))) / 2;
    CHECK(smr_loss({a, b}, c).item<double>() == doctest::Approx(want).epsilon(1e-12));
    CHECK_THROWS(smr_loss({a}, randn({2, 4, 2, 2}, 1)));
}

TEST_CASE("adversarial losses in both forms") {
    const auto real = randn({2, 1, 3, 3}, 13), fake = randn({2, 1, 3, 3}, 14);
    const auto [g, d] = adversarial_losses(real, fake);
    CHECK(g.item<double>() == doctest::Approx(torch::log1p(torch::exp(-fake)).mean().item<double>()).epsilon(1e-12));
    CHECK(d.item<double>() == doctest::Approx((torch::log1p(torch::exp(-real)).mean() +
                                               torch::log1p(torch::exp(fake)).mean())
                                                  .item<double>())
                                  .epsilon(1e-12));
    const auto [gl, dl] = adversarial_losses(real, fake, AdversarialForm::LeastSquares);
    CHECK(gl.item<double>() == doctest::Approx((fake - 1).pow(2).mean().item<double>()).epsilon(1e-12));
    CHECK(dl.item<double>() == doctest::Approx(((real - 1).pow(2).mean() + fake.pow(2).mean()).item<double>()).epsilon(1e-12));
}

TEST_CASE("weighted total: defaults give 1.45 on unit components, linear in each weight") {
    const LossWeights w;
    const LossBreakdown ones{1, 1, 1, 1, 1, 1, 0};
    CHECK(std::abs(total_generator_loss(ones, w).total - 1.45) <= 1e-6 * 1.45);

    const LossBreakdown parts{0.7, 2.3, 1.1, 0.4, 0.9, 1.6, 0};
    const double base = total_generator_loss(parts, w).total;
    CHECK(std::abs(base - (0.7 + 0.1 * 2.3 + 0.05 * 1.1 + 0.1 * 0.4 + 0.1 * 0.9 + 0.1 * 1.6)) <= 1e-12);
    const std::pair<double LossWeights::*, double> weights[] = {{&LossWeights::alpha, parts.con},
                                                                {&LossWeights::beta, parts.seg},
                                                                {&LossWeights::gamma, parts.sr_decoder},
                                                                {&LossWeights::delta, parts.smr},
                                                                {&LossWeights::eta, parts.mmr}};
    for (const auto& [member, component] : weights) {
        LossWeights scaled = w;
        scaled.*member *= 3.0;
        const double contribution = w.*member * component;
        CHECK(std::abs((total_generator_loss(parts, scaled).total - base) - 2.0 * contribution) <= 1e-12);
    }

    LossTerms t;
    t.adv = torch::tensor(0.7, torch::kFloat64);
    t.con = torch::tensor(2.3, torch::kFloat64);
    t.seg = torch::tensor(1.1, torch::kFloat64);
    t.sr_decoder = torch::tensor(0.4, torch::kFloat64);
    t.smr = torch::tensor(0.9, torch::kFloat64);
    t.mmr = torch::tensor(1.6, torch::kFloat64);
    CHECK(weighted_total(t, w).item<double>() == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("a non-finite component raises a numerical error naming it") {
    LossBreakdown parts{1, 1, 1, 1, 1, 1, 0};
    parts.smr = std::numeric_limits<double>::quiet_NaN();
    try {
        total_generator_loss(parts, {});
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("smr") != std::string::npos);
    }
}

TEST_CASE("negative weights are rejected with the field name") {
    LossWeights w;
    w.alpha = -0.1;
    try {
        w.validate();
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
    w = {};
    w.tau = 0.0;
    CHECK_THROWS(w.validate());
}

TEST_CASE("every loss passes a double-precision finite-difference gradient check") {
    const double tol = 1e-4;
    const auto a = randn({4, 5}, 20), p = randn({4, 5}, 21);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return contrastive_loss(x, p, 0.2); }, a) < tol);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return contrastive_loss(a, x, 0.2); }, p) < tol);

    const auto logits = randn({1, 4, 3, 4}, 22);
    const auto target = torch::randint(0, 4, {1, 3, 4}, torch::kInt64);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return segmentation_loss(x, target); }, logits) < tol);

    const auto g = randn({1, 4, 2, 2}, 23), s = randn({1, 4, 2, 2}, 24);
    for (auto dir : {KlDirection::SrToGen, KlDirection::GenToSr}) {
        CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return sr_decoder_loss(maps({x}), maps({s}), dir); }, g) < tol);
        CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return sr_decoder_loss(maps({g}), maps({x}), dir); }, s) < tol);
    }

    const auto f1 = randn({1, 2, 2, 2}, 25), f2 = randn({1, 2, 2, 2}, 26), sr = randn({1, 2, 2, 2}, 27);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return smr_loss({x, f2}, sr); }, f1) < tol);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return smr_loss({f1, f2}, x); }, sr) < tol);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return mmr_loss(x, sr); }, f1) < tol);

    const auto dr = randn({1, 1, 3, 3}, 28), df = randn({1, 1, 3, 3}, 29);
    for (auto form : {AdversarialForm::NonSaturating, AdversarialForm::LeastSquares}) {
        CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return generator_adversarial_loss(x, form); }, df) < tol);
        CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return discriminator_adversarial_loss(x, df, form); }, dr) < tol);
        CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return discriminator_adversarial_loss(dr, x, form); }, df) < tol);
    }

    // Weighted total through its terms.
    const auto terms = randn({6}, 30);
    CHECK(oracle::gradient_error(
              [&](const torch::Tensor& x) {
                  return weighted_total({x[0], x[1], x[2], x[3], x[4], x[5]}, LossWeights{});
              },
              terms) < tol);
}
