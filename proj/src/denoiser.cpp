#include "cdst/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cdst {

BlockRegistry build_sdxl_layout() {
    BlockRegistry reg;
    reg.total = 70;
    reg.encoder_range = {0, 24};
    reg.middle_range = {24, 34};
    reg.decoder_range = {34, 70};
    return reg;
}

void InjectionPolicy::validate() const {
    if (lambda_s.size() != lambda_c.size() || lambda_s.size() != style_active.size())
        throw std::invalid_argument("InjectionPolicy: mismatched table lengths");
    for (size_t i = 0; i < lambda_s.size(); ++i)
        if (!style_active[i] && lambda_s[i] != 0.0)
            throw std::invalid_argument("InjectionPolicy: lambda_s nonzero on inactive block");
}

InjectionPolicy cdst_inference_policy(const BlockRegistry& reg) {
    if (reg.total < 70)
        throw std::invalid_argument("cdst_inference_policy: needs the 70-block layout");
    InjectionPolicy p;
    p.lambda_s.assign(reg.total, 0.0);
    p.lambda_c.assign(reg.total, 1.0);
    p.style_active.assign(reg.total, 0);
    for (size_t i = 0; i < 14; ++i) {
        p.lambda_s[i] = 0.2;
        p.style_active[i] = 1;
    }
    for (size_t i = 44; i < 70; ++i) {
        p.lambda_s[i] = 0.9;
        p.style_active[i] = 1;
    }
    return p;
}

InjectionPolicy training_policy(const BlockRegistry& reg) {
    InjectionPolicy p;
    p.lambda_s.assign(reg.total, 1.0);
    p.lambda_c.assign(reg.total, 1.0);
    p.style_active.assign(reg.total, 1);
    return p;
}

void save_policy(const std::string& path, const InjectionPolicy& policy) {
    policy.validate();
    nlohmann::json j;
    j["lambda_s"] = policy.lambda_s;
    j["lambda_c"] = policy.lambda_c;
    j["style_active"] = std::vector<int>(policy.style_active.begin(), policy.style_active.end());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write policy file: " + path);
    out << j.dump(2) << "\n";
}

InjectionPolicy load_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read policy file: " + path);
    nlohmann::json j;
    in >> j;
    InjectionPolicy p;
    p.lambda_s = j.at("lambda_s").get<std::vector<double>>();
    p.lambda_c = j.at("lambda_c").get<std::vector<double>>();
    for (int v : j.at("style_active").get<std::vector<int>>())
        p.style_active.push_back(static_cast<uint8_t>(v != 0));
    p.validate();
    return p;
}

StreamProjections StreamProjections::init(const std::vector<size_t>& block_widths,
                                          size_t token_dim, RandomSource& rng) {
    StreamProjections proj;
    proj.token_dim = token_dim;
    // Keys at the usual fan-in scale; values much cooler, so the 70 residual
    // injections do not swamp the frozen base at the start of training.
    double key_sd = std::sqrt(1.0 / static_cast<double>(token_dim));
    double value_sd = 0.01;
    for (size_t w : block_widths) {
        Block b{Tensor::randn({token_dim, w}, rng, key_sd, true),
                Tensor::randn({token_dim, w}, rng, value_sd, true),
                Tensor::randn({token_dim, w}, rng, key_sd, true),
                Tensor::randn({token_dim, w}, rng, value_sd, true)};
        if (w == 24 && token_dim >= 4) {
            // Head-stage blocks: seed the color stream with an analytic
            // palette-snap circuit instead of leaving it to emerge. Color
            // tokens start as (mass, r, g, b); the head queries expose the
            // local latent color in dims 0-3 (see ToyUNet); so keys that
            // copy the token color at a high gain make the softmax pick the
            // nearest reference color, and values that write that color
            // into the reserved output channels 20-23 complete the snap.
            // Everything stays trainable; this is only the starting point.
            const double kKeyGain = 10.0;
            std::vector<double> kc(token_dim * w, 0.0);
            std::vector<double> vc(token_dim * w, 0.0);
            // six head blocks contribute; together they write one unit of
            // the selected color into the reserved output channels
            for (size_t d = 1; d <= 3; ++d) {
                kc[d * w + d] = kKeyGain;
                vc[d * w + 19 + d] = 1.0 / 6.0;   // channels 20-22: RGB
                vc[d * w + 23] = 1.0 / 18.0;      // channel 23: mean
            }
            b.wk_c.value() = kc;
            b.wv_c.value() = vc;
        }
        proj.blocks.push_back(b);
    }
    return proj;
}

void StreamProjections::named_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string p = "proj." + std::to_string(i) + ".";
        out.emplace_back(p + "wk_s", blocks[i].wk_s);
        out.emplace_back(p + "wv_s", blocks[i].wv_s);
        out.emplace_back(p + "wk_c", blocks[i].wk_c);
        out.emplace_back(p + "wv_c", blocks[i].wv_c);
    }
}

void StreamProjections::load_from(const std::map<std::string, Tensor>& entries) {
    std::vector<std::pair<std::string, Tensor>> params;
    named_params(params);
    for (auto& [name, t] : params) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error("checkpoint is missing entry '" + name + "'");
        if (it->second.shape() != t.shape())
            throw std::runtime_error("checkpoint shape mismatch at '" + name + "'");
        t.value() = it->second.value();
    }
}

Tensor cross_attention_block(const Tensor& x, const AttnBase& base, const TokenSet& e_t,
                             const TokenSet& e_s, const TokenSet& e_c,
                             const StreamProjections& proj, const InjectionPolicy& policy,
                             size_t idx) {
    if (idx >= policy.size() || idx >= proj.blocks.size())
        throw std::invalid_argument("cross_attention_block: block index out of range");
    size_t c = x.dim(1);
    Tensor q = matmul(layer_norm(x), base.wq);
    Tensor out = add(x, attention(q, matmul(e_t.tokens, base.wk_t),
                                  matmul(e_t.tokens, base.wv_t), c));
    double ls = policy.style_active[idx] ? policy.lambda_s[idx] : 0.0;
    if (ls != 0.0) {
        const auto& b = proj.blocks[idx];
        Tensor o = attention(q, matmul(e_s.tokens, b.wk_s), matmul(e_s.tokens, b.wv_s), c);
        out = add(out, scale(o, ls));
    }
    if (policy.lambda_c[idx] != 0.0) {
        const auto& b = proj.blocks[idx];
        Tensor o = attention(q, matmul(e_c.tokens, b.wk_c), matmul(e_c.tokens, b.wv_c), c);
        out = add(out, scale(o, policy.lambda_c[idx]));
    }
    return out;
}

namespace {

constexpr size_t kTimeDim = 64;

Tensor sinusoidal_embedding(size_t t) {
    std::vector<double> v(kTimeDim);
    for (size_t i = 0; i < kTimeDim / 2; ++i) {
        double w = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                            (kTimeDim / 2.0 - 1.0));
        v[i] = std::sin(t * w);
        v[kTimeDim / 2 + i] = std::cos(t * w);
    }
    return Tensor::from({1, kTimeDim}, std::move(v));
}

Tensor conv_init(size_t co, size_t ci, RandomSource& rng, double gain = 1.0) {
    double sd = gain * std::sqrt(2.0 / (9.0 * static_cast<double>(ci)));
    return Tensor::randn({co, ci, 3, 3}, rng, sd);
}

}  // namespace

ToyUNet::ToyUNet(uint64_t frozen_seed, size_t token_dim)
    : registry_(build_sdxl_layout()), token_dim_(token_dim) {
    RandomSource rng(frozen_seed);
    widths_.assign(registry_.total, 64);
    for (size_t i = 0; i < 4; ++i) widths_[i] = 16;
    for (size_t i = 64; i < 70; ++i) widths_[i] = 24;

    auto conv = [&](size_t co, size_t ci, double gain = 1.0) {
        return Conv{conv_init(co, ci, rng, gain), Tensor::zeros({co})};
    };
    // Convs not followed by an activation get variance-preserving scale
    // (the He-style default assumes a following gelu).
    const double kLinear = 0.7071067811865476;
    stem_ = conv(16, 4, kLinear);
    down1_ = conv(64, 16, kLinear);
    down2_ = conv(64, 64, kLinear);
    merge1_ = conv(16, 64, kLinear);
    // The head stage widens 16 -> 24 channels with fixed wiring. Channels
    // 0-15 carry the frozen decoder features, 16-19 receive the noisy
    // latent verbatim, and 20-23 start at zero so only the cross-attention
    // residuals of blocks 64-69 can populate them. The fixed output conv
    // reads x0_hat - latent off those slots: correction = x[20:24] - x[16:20],
    // which makes the implied clean image exactly the attention output — a
    // per-pixel softmax mixture of learned stream values. Flat palette
    // regions are therefore the natural output of the head, while queries
    // still see both the conv features and the exact local color.
    {
        std::vector<double> w(24 * 16 * 9, 0.0);
        for (size_t c = 0; c < 16; ++c) w[(c * 16 + c) * 9 + 4] = 1.0;
        widen_ = Conv{Tensor::from({24, 16, 3, 3}, std::move(w)), Tensor::zeros({24})};
    }
    {
        std::vector<double> w(24 * 4 * 9, 0.0);
        for (size_t c = 0; c < 4; ++c) w[((16 + c) * 4 + c) * 9 + 4] = 1.0;
        inj_ = Conv{Tensor::from({24, 4, 3, 3}, std::move(w)), Tensor::zeros({24})};
    }
    {
        std::vector<double> w(4 * 24 * 9, 0.0);
        for (size_t c = 0; c < 4; ++c) {
            w[(c * 24 + 20 + c) * 9 + 4] = 1.0;
            w[(c * 24 + 16 + c) * 9 + 4] = -1.0;
        }
        out_ = Conv{Tensor::from({4, 24, 3, 3}, std::move(w)), Tensor::zeros({4})};
    }

    const size_t stage_ch[5] = {16, 64, 64, 16, 16};
    for (size_t s = 0; s < 5; ++s) {
        res_.push_back(conv(stage_ch[s], stage_ch[s], 0.5));
        time_w_.push_back(Tensor::randn({kTimeDim, stage_ch[s]}, rng,
                                        std::sqrt(1.0 / kTimeDim)));
        time_b_.push_back(Tensor::zeros({stage_ch[s]}));
    }
    for (size_t i = 0; i < registry_.total; ++i) {
        // cool text-value scale: 70 residual additions must not blow up x
        size_t c = widths_[i];
        attn_.push_back({Tensor::randn({c, c}, rng, std::sqrt(1.0 / c)),
                         Tensor::randn({token_dim, c}, rng, std::sqrt(1.0 / token_dim)),
                         Tensor::randn({token_dim, c}, rng, 0.02)});
        if (c == 24) {
            // Head-stage sites: query dims 0-3 read the (normalized) latent
            // channels 19,16,17,18 directly, giving the stream projections a
            // fixed, known geometry for per-pixel color comparisons. The
            // remaining 20 query dims stay random.
            std::vector<double>& wq = attn_.back().wq.value();
            for (size_t row = 0; row < c; ++row)
                for (size_t col = 0; col < 4; ++col) wq[row * c + col] = 0.0;
            wq[19 * c + 0] = 1.0;
            wq[16 * c + 1] = 1.0;
            wq[17 * c + 2] = 1.0;
            wq[18 * c + 3] = 1.0;
        }
    }

    // fixed head coefficient table: the network predicts a clean-image
    // correction, and the head converts it to a noise prediction analytically
    head_alpha_bar_.assign(kHeadT + 1, 1.0);
    double sb0 = std::sqrt(0.00085), sb1 = std::sqrt(0.012);
    for (size_t i = 1; i <= kHeadT; ++i) {
        double sb = sb0 + (sb1 - sb0) * static_cast<double>(i - 1) /
                              static_cast<double>(kHeadT - 1);
        head_alpha_bar_[i] = head_alpha_bar_[i - 1] * (1.0 - sb * sb);
    }
}

Tensor ToyUNet::stage(Tensor x, size_t stage_idx, const Tensor& temb) const {
    Tensor tvec = reshape(add_rowwise(matmul(temb, time_w_[stage_idx]), time_b_[stage_idx]),
                          {x.dim(0)});
    Tensor h = conv2d(x, res_[stage_idx].w, res_[stage_idx].b, 1);
    return add(x, gelu(add_channelwise(h, tvec)));
}

Tensor ToyUNet::run_blocks(Tensor x, size_t begin, size_t end, const TokenSet& e_t,
                           const TokenSet& e_s, const TokenSet& e_c,
                           const StreamProjections& proj, const InjectionPolicy& policy) const {
    size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor tokens = transpose(reshape(x, {c, h * w}));
    for (size_t i = begin; i < end; ++i)
        tokens = cross_attention_block(tokens, attn_[i], e_t, e_s, e_c, proj, policy, i);
    return reshape(transpose(tokens), {c, h, w});
}

Tensor ToyUNet::forward(const Tensor& latent, size_t t, const TokenSet& e_t,
                        const TokenSet& e_s, const TokenSet& e_c,
                        const StreamProjections& proj, const InjectionPolicy& policy,
                        const std::vector<Tensor>* cond) const {
    if (latent.shape().size() != 3 || latent.dim(0) != 4 || latent.dim(1) % 4 != 0 ||
        latent.dim(2) % 4 != 0)
        throw std::invalid_argument("ToyUNet: latent must be [4, 4k, 4k]");
    if (e_t.tokens.dim(1) != token_dim_ || e_s.tokens.dim(1) != token_dim_ ||
        e_c.tokens.dim(1) != token_dim_)
        throw std::invalid_argument("ToyUNet: token width mismatch");
    if (policy.size() != registry_.total)
        throw std::invalid_argument("ToyUNet: policy length mismatch");
    if (cond && cond->size() != 3)
        throw std::invalid_argument("ToyUNet: expected one residual per encoder resolution");
    if (t < 1 || t > kHeadT)
        throw std::invalid_argument("ToyUNet: timestep outside the schedule");

    Tensor temb = sinusoidal_embedding(t);

    Tensor x = stage(conv2d(latent, stem_.w, stem_.b, 1), 0, temb);
    if (cond) x = add(x, (*cond)[0]);
    x = run_blocks(x, 0, 4, e_t, e_s, e_c, proj, policy);
    Tensor skip_a = x;

    x = stage(conv2d(x, down1_.w, down1_.b, 2), 1, temb);
    if (cond) x = add(x, (*cond)[1]);
    x = run_blocks(x, 4, 14, e_t, e_s, e_c, proj, policy);
    Tensor skip_b = x;

    x = stage(conv2d(x, down2_.w, down2_.b, 2), 2, temb);
    if (cond) x = add(x, (*cond)[2]);
    x = run_blocks(x, 14, 24, e_t, e_s, e_c, proj, policy);  // encoder, low res
    x = run_blocks(x, 24, 34, e_t, e_s, e_c, proj, policy);  // middle
    x = run_blocks(x, 34, 64, e_t, e_s, e_c, proj, policy);  // decoder, low res

    x = conv2d(add(upsample2x(x), skip_b), merge1_.w, merge1_.b, 1);
    x = stage(x, 3, temb);

    // Head stage at full latent resolution. The identity injection puts the
    // noisy latent back into the leading channels, so blocks 64-69 attend
    // with per-pixel queries that carry the local color — the geometry a
    // palette-snapping color stream needs.
    x = stage(add(upsample2x(x), skip_a), 4, temb);
    x = conv2d(x, widen_.w, widen_.b, 1);
    x = add(x, conv2d(latent, inj_.w, inj_.b, 1));
    x = run_blocks(x, 64, 70, e_t, e_s, e_c, proj, policy);  // decoder, full res
    Tensor correction = conv2d(x, out_.w, out_.b, 1);

    // x0-parametrized head: the clean-image estimate latent + correction is
    // mapped to eps_hat = (latent - sqrt(ab) * x0_hat) / sqrt(1 - ab). This
    // keeps the network's task consistent across timesteps; the small-t
    // amplification happens in the analytic map, not inside the convs.
    double ab = head_alpha_bar_[t];
    // the amplification is floored so near-zero timesteps cannot blow the
    // training signal up; the correction term absorbs the difference there
    double sigma = std::max(std::sqrt(1.0 - ab), 0.125);
    Tensor x0_hat = add(latent, correction);
    return scale(sub(latent, scale(x0_hat, std::sqrt(ab))), 1.0 / sigma);
}

void ToyUNet::frozen_named_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    auto put = [&](const std::string& n, const Conv& c) {
        out.emplace_back(n + ".w", c.w);
        out.emplace_back(n + ".b", c.b);
    };
    put("base.stem", stem_);
    put("base.down1", down1_);
    put("base.down2", down2_);
    put("base.merge1", merge1_);
    put("base.out", out_);
    put("base.widen", widen_);
    put("base.inj", inj_);
    for (size_t s = 0; s < res_.size(); ++s) {
        put("base.res" + std::to_string(s), res_[s]);
        out.emplace_back("base.time" + std::to_string(s) + ".w", time_w_[s]);
        out.emplace_back("base.time" + std::to_string(s) + ".b", time_b_[s]);
    }
    for (size_t i = 0; i < attn_.size(); ++i) {
        std::string p = "base.attn" + std::to_string(i) + ".";
        out.emplace_back(p + "wq", attn_[i].wq);
        out.emplace_back(p + "wk_t", attn_[i].wk_t);
        out.emplace_back(p + "wv_t", attn_[i].wv_t);
    }
}

ConditionEncoder::ConditionEncoder(uint64_t frozen_seed) {
    RandomSource rng(frozen_seed);
    e0w_ = conv_init(8, 1, rng);
    e0b_ = Tensor::zeros({8});
    r0w_ = conv_init(16, 8, rng, 0.5);
    r0b_ = Tensor::zeros({16});
    e1w_ = conv_init(16, 8, rng);
    e1b_ = Tensor::zeros({16});
    r1w_ = conv_init(64, 16, rng, 0.5);
    r1b_ = Tensor::zeros({64});
    e2w_ = conv_init(16, 16, rng);
    e2b_ = Tensor::zeros({16});
    r2w_ = conv_init(64, 16, rng, 0.5);
    r2b_ = Tensor::zeros({64});
}

std::vector<Tensor> ConditionEncoder::residuals(const EdgeMap& edges,
                                                double controlnet_weight) const {
    if (edges.width <= 0 || edges.height <= 0 || edges.width % 4 != 0 || edges.height % 4 != 0)
        throw std::invalid_argument("ConditionEncoder: edge map dims must be multiples of 4");
    std::vector<double> v(edges.data.begin(), edges.data.end());
    Tensor x = Tensor::from({1, static_cast<size_t>(edges.height),
                             static_cast<size_t>(edges.width)}, std::move(v));
    Tensor h0 = gelu(conv2d(x, e0w_, e0b_, 2));
    Tensor h1 = gelu(conv2d(h0, e1w_, e1b_, 2));
    Tensor h2 = gelu(conv2d(h1, e2w_, e2b_, 2));
    return {scale(conv2d(h0, r0w_, r0b_, 1), controlnet_weight),
            scale(conv2d(h1, r1w_, r1b_, 1), controlnet_weight),
            scale(conv2d(h2, r2w_, r2b_, 1), controlnet_weight)};
}

Tensor toy_encode(const ImageBuffer& img) {
    if (img.space != ColorSpace::SRGB)
        throw std::invalid_argument("toy_encode: expects an sRGB image");
    if (img.width % 2 != 0 || img.height % 2 != 0 || img.data.empty())
        throw std::invalid_argument("toy_encode: dims must be positive and even");
    size_t h = img.height / 2, w = img.width / 2;
    std::vector<double> v(4 * h * w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            double rgb[3];
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        s += img.data[3 * ((2 * y + dy) * img.width + 2 * x + dx) + c];
                rgb[c] = s / 4.0;
                v[c * h * w + y * w + x] = 2.0 * (rgb[c] - 0.5);
            }
            double m = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
            v[3 * h * w + y * w + x] = 2.0 * (m - 0.5);
        }
    return Tensor::from({4, h, w}, std::move(v));
}

ImageBuffer toy_decode(const Tensor& latent) {
    if (latent.shape().size() != 3 || latent.dim(0) != 4)
        throw std::invalid_argument("toy_decode: expects a [4,h,w] latent");
    size_t h = latent.dim(1), w = latent.dim(2);
    ImageBuffer img(static_cast<int>(2 * w), static_cast<int>(2 * h), ColorSpace::SRGB);
    const std::vector<double>& v = latent.value();
    for (size_t y = 0; y < 2 * h; ++y)
        for (size_t x = 0; x < 2 * w; ++x)
            for (int c = 0; c < 3; ++c) {
                double u = v[c * h * w + (y / 2) * w + x / 2] / 2.0 + 0.5;
                img.data[3 * (y * 2 * w + x) + c] =
                    static_cast<float>(std::clamp(u, 0.0, 1.0));
            }
    return img;
}

}  // namespace cdst
