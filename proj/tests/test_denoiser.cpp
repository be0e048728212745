#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "cdst/denoiser.hpp"
#include "doctest.h"

using namespace cdst;

namespace {

constexpr size_t kD = 64;

struct Rig {
    ToyUNet unet{7, kD};
    StreamProjections proj;
    TokenSet e_t, e_s, e_c;
    Tensor latent;

    explicit Rig(uint64_t seed = 1) {
        RandomSource rng(seed);
        proj = StreamProjections::init(unet.block_widths(), kD, rng);
        e_t = {Tensor::randn({1, kD}, rng, 1.0), TokenKind::Text};
        e_s = {Tensor::randn({7, kD}, rng, 1.0), TokenKind::Style};
        e_c = {Tensor::randn({4, kD}, rng, 1.0), TokenKind::Color};
        latent = Tensor::randn({4, 32, 32}, rng, 1.0);
    }
};

}  // namespace

TEST_CASE("sdxl layout: 70 blocks split 24/10/36") {
    BlockRegistry reg = build_sdxl_layout();
    CHECK(reg.total == 70);
    CHECK(reg.encoder_range.second - reg.encoder_range.first == 24);
    CHECK(reg.middle_range.second - reg.middle_range.first == 10);
    CHECK(reg.decoder_range.second - reg.decoder_range.first == 36);
    CHECK(reg.encoder_range.first == 0);
    CHECK(reg.middle_range.first == reg.encoder_range.second);
    CHECK(reg.decoder_range.first == reg.middle_range.second);
    CHECK(reg.decoder_range.second == reg.total);
}

TEST_CASE("inference policy: style on [0,14) at 0.2 and [44,70) at 0.9") {
    InjectionPolicy p = cdst_inference_policy(build_sdxl_layout());
    p.validate();
    size_t active = 0;
    for (size_t i = 0; i < 70; ++i) {
        CHECK(p.lambda_c[i] == 1.0);
        active += p.style_active[i];
        if (i < 14) {
            CHECK(p.style_active[i]);
            CHECK(p.lambda_s[i] == 0.2);
        } else if (i < 44) {
            CHECK_FALSE(p.style_active[i]);
            CHECK(p.lambda_s[i] == 0.0);
        } else {
            CHECK(p.style_active[i]);
            CHECK(p.lambda_s[i] == 0.9);
        }
    }
    CHECK(active == 40);

    BlockRegistry small;
    small.total = 10;
    CHECK_THROWS_AS(cdst_inference_policy(small), std::invalid_argument);
}

TEST_CASE("training policy: both streams everywhere at 1.0") {
    InjectionPolicy p = training_policy(build_sdxl_layout());
    CHECK(p.size() == 70);
    for (size_t i = 0; i < 70; ++i) {
        CHECK(p.lambda_s[i] == 1.0);
        CHECK(p.lambda_c[i] == 1.0);
        CHECK(p.style_active[i]);
    }
}

TEST_CASE("policy JSON sidecar round trip and validation") {
    InjectionPolicy p = cdst_inference_policy(build_sdxl_layout());
    std::string path = "policy_rt.json";
    save_policy(path, p);
    InjectionPolicy r = load_policy(path);
    CHECK(r.lambda_s == p.lambda_s);
    CHECK(r.lambda_c == p.lambda_c);
    CHECK(r.style_active == p.style_active);
    std::remove(path.c_str());

    InjectionPolicy bad = p;
    bad.lambda_s[20] = 0.5;  // inactive block with nonzero weight
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("cross attention: zero weights degenerate to text-only") {
    Rig rig;
    RandomSource rng(3);
    Tensor x = Tensor::randn({9, 64}, rng, 1.0);

    InjectionPolicy off = training_policy(build_sdxl_layout());
    for (size_t i = 0; i < off.size(); ++i) {
        off.lambda_s[i] = 0.0;
        off.lambda_c[i] = 0.0;
        off.style_active[i] = 0;
    }
    AttnBase base{Tensor::randn({64, 64}, rng, 0.2), Tensor::randn({kD, 64}, rng, 0.2),
                  Tensor::randn({kD, 64}, rng, 0.2)};
    Tensor got = cross_attention_block(x, base, rig.e_t, rig.e_s, rig.e_c, rig.proj, off, 10);
    Tensor q = matmul(layer_norm(x), base.wq);
    Tensor want = add(x, attention(q, matmul(rig.e_t.tokens, base.wk_t),
                                   matmul(rig.e_t.tokens, base.wv_t), 64));
    CHECK(got.value() == want.value());
    CHECK(got.shape() == x.shape());
}

TEST_CASE("cross attention: linear in lambda_s") {
    Rig rig;
    RandomSource rng(4);
    Tensor x = Tensor::randn({5, 64}, rng, 1.0);
    AttnBase base{Tensor::randn({64, 64}, rng, 0.2), Tensor::randn({kD, 64}, rng, 0.2),
                  Tensor::randn({kD, 64}, rng, 0.2)};
    auto with_ls = [&](double ls) {
        InjectionPolicy p = training_policy(build_sdxl_layout());
        for (double& v : p.lambda_s) v = ls;
        return cross_attention_block(x, base, rig.e_t, rig.e_s, rig.e_c, rig.proj, p, 20);
    };
    Tensor y0 = with_ls(0.0), yh = with_ls(0.5), y1 = with_ls(1.0);
    for (size_t i = 0; i < y0.size(); ++i) {
        double d_half = yh.value()[i] - y0.value()[i];
        double d_full = y1.value()[i] - y0.value()[i];
        CHECK(std::fabs(d_full - 2.0 * d_half) < 1e-12);
    }
}

TEST_CASE("unet forward: shape, determinism, additive injection") {
    Rig rig;
    InjectionPolicy pol = cdst_inference_policy(build_sdxl_layout());
    NoGradGuard ng;
    Tensor out = rig.unet.forward(rig.latent, 500, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol);
    CHECK(out.shape() == rig.latent.shape());
    Tensor again = rig.unet.forward(rig.latent, 500, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol);
    CHECK(out.value() == again.value());

    // zeroed projections behave exactly like disabled streams
    Rig zeroed;
    std::vector<std::pair<std::string, Tensor>> params;
    zeroed.proj.named_params(params);
    for (auto& [name, p] : params) std::fill(p.value().begin(), p.value().end(), 0.0);
    InjectionPolicy off = training_policy(build_sdxl_layout());
    for (size_t i = 0; i < off.size(); ++i) {
        off.lambda_s[i] = off.lambda_c[i] = 0.0;
        off.style_active[i] = 0;
    }
    Tensor a = zeroed.unet.forward(rig.latent, 100, rig.e_t, rig.e_s, rig.e_c, zeroed.proj, pol);
    Tensor b = zeroed.unet.forward(rig.latent, 100, rig.e_t, rig.e_s, rig.e_c, zeroed.proj, off);
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
}

TEST_CASE("unet forward: timestep changes the prediction") {
    Rig rig;
    InjectionPolicy pol = training_policy(build_sdxl_layout());
    NoGradGuard ng;
    Tensor a = rig.unet.forward(rig.latent, 10, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol);
    Tensor b = rig.unet.forward(rig.latent, 900, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol);
    CHECK(a.value() != b.value());
}

TEST_CASE("unet forward: input validation") {
    Rig rig;
    InjectionPolicy pol = training_policy(build_sdxl_layout());
    RandomSource rng(5);
    Tensor bad = Tensor::randn({3, 32, 32}, rng, 1.0);
    CHECK_THROWS_AS(
        rig.unet.forward(bad, 10, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol),
        std::invalid_argument);
    TokenSet wrong{Tensor::randn({7, 32}, rng, 1.0), TokenKind::Style};
    CHECK_THROWS_AS(
        rig.unet.forward(rig.latent, 10, rig.e_t, wrong, rig.e_c, rig.proj, pol),
        std::invalid_argument);
}

TEST_CASE("unet gradients: stream projection matches finite differences") {
    Rig rig;
    InjectionPolicy pol = training_policy(build_sdxl_layout());
    Tensor target = Tensor::zeros({4, 32, 32});
    auto loss_of = [&]() {
        return mse(rig.unet.forward(rig.latent, 300, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol),
                   target);
    };
    Tensor l = loss_of();
    l.backward();
    std::mt19937_64 pick(6);
    // spot-check one entry in each of the four stream matrices of block 50
    auto& blk = rig.proj.blocks[50];
    for (Tensor* p : {&blk.wk_s, &blk.wv_s, &blk.wk_c, &blk.wv_c}) {
        size_t i = pick() % p->size();
        double an = p->grad()[i];
        double h = 1e-5, keep = p->value()[i];
        p->value()[i] = keep + h;
        double up = loss_of().item();
        p->value()[i] = keep - h;
        double dn = loss_of().item();
        p->value()[i] = keep;
        double fd = (up - dn) / (2 * h);
        double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
        CHECK(std::fabs(fd - an) / denom < 1e-4);
    }
}

TEST_CASE("unet: frozen base holds no gradient state") {
    Rig rig;
    std::vector<std::pair<std::string, Tensor>> frozen;
    rig.unet.frozen_named_params(frozen);
    CHECK(frozen.size() > 70 * 3);
    for (auto& [name, p] : frozen) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("condition encoder: residual shapes and zero weight") {
    ConditionEncoder enc(11);
    EdgeMap edges;
    edges.width = edges.height = 64;
    edges.data.assign(64 * 64, 0);
    for (int i = 0; i < 64; ++i) edges.data[i * 64 + 20] = 1;

    auto res = enc.residuals(edges, 1.0);
    REQUIRE(res.size() == 3);
    CHECK(res[0].shape() == Shape{16, 32, 32});
    CHECK(res[1].shape() == Shape{64, 16, 16});
    CHECK(res[2].shape() == Shape{64, 8, 8});

    for (const Tensor& r : enc.residuals(edges, 0.0))
        for (double v : r.value()) CHECK(v == 0.0);

    // scaling is exact
    auto res2 = enc.residuals(edges, 2.0);
    for (size_t k = 0; k < 3; ++k)
        for (size_t i = 0; i < res[k].size(); ++i)
            CHECK(res2[k].value()[i] == doctest::Approx(2.0 * res[k].value()[i]).epsilon(1e-12));

    EdgeMap bad;
    bad.width = 30;
    bad.height = 64;
    bad.data.assign(30 * 64, 0);
    CHECK_THROWS_AS(enc.residuals(bad, 1.0), std::invalid_argument);
}

TEST_CASE("unet forward: conditioning residuals shift the output") {
    Rig rig;
    InjectionPolicy pol = training_policy(build_sdxl_layout());
    ConditionEncoder enc(12);
    EdgeMap edges;
    edges.width = edges.height = 64;
    edges.data.assign(64 * 64, 0);
    for (int i = 0; i < 64; ++i) edges.data[10 * 64 + i] = 1;
    auto res = enc.residuals(edges, 1.0);
    NoGradGuard ng;
    Tensor with = rig.unet.forward(rig.latent, 40, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol, &res);
    Tensor without = rig.unet.forward(rig.latent, 40, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol);
    CHECK(with.shape() == without.shape());
    CHECK(with.value() != without.value());

    auto zero = enc.residuals(edges, 0.0);
    Tensor same =
        rig.unet.forward(rig.latent, 40, rig.e_t, rig.e_s, rig.e_c, rig.proj, pol, &zero);
    CHECK(same.value() == without.value());
}

TEST_CASE("toy latent codec: shapes, determinism, idempotent round trip") {
    std::mt19937_64 eng(13);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageBuffer img(64, 64, ColorSpace::SRGB);
    for (float& v : img.data) v = u(eng);

    Tensor z = toy_encode(img);
    CHECK(z.shape() == Shape{4, 32, 32});
    CHECK(toy_encode(img).value() == z.value());

    // fourth channel is the mean of the first three
    for (size_t i = 0; i < 32 * 32; ++i) {
        double m = (z.value()[i] + z.value()[1024 + i] + z.value()[2048 + i]) / 3.0;
        CHECK(z.value()[3072 + i] == doctest::Approx(m).epsilon(1e-12));
    }

    ImageBuffer once = toy_decode(z);
    CHECK(once.width == 64);
    CHECK(once.height == 64);
    // each 2x2 block of the decode is the block average of the input
    for (int y = 0; y < 64; y += 2)
        for (int c = 0; c < 3; ++c) {
            double avg = (img.data[3 * (y * 64) + c] + img.data[3 * (y * 64 + 1) + c] +
                          img.data[3 * ((y + 1) * 64) + c] + img.data[3 * ((y + 1) * 64 + 1) + c]) /
                         4.0;
            CHECK(once.data[3 * (y * 64) + c] == doctest::Approx(avg).epsilon(1e-6));
        }

    // decode(encode(.)) is a projection: applying it twice changes nothing
    ImageBuffer twice = toy_decode(toy_encode(once));
    CHECK(twice.data == once.data);

    ImageBuffer odd(63, 64, ColorSpace::SRGB);
    odd.data.assign(63 * 64 * 3, 0.5f);
    CHECK_THROWS_AS(toy_encode(odd), std::invalid_argument);
}
