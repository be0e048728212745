#include "cdst/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cdst/checkpoint.hpp"

namespace cdst {

void ExtractorSpec::validate() const {
    if (block_count == 0 || channels == 0)
        throw std::invalid_argument("ExtractorSpec: empty stack");
    if (shallow_taps.empty())
        throw std::invalid_argument("ExtractorSpec: no shallow taps");
    for (size_t i = 0; i < shallow_taps.size(); ++i) {
        if (shallow_taps[i] >= block_count)
            throw std::invalid_argument("ExtractorSpec: tap out of range");
        if (i > 0 && shallow_taps[i] <= shallow_taps[i - 1])
            throw std::invalid_argument("ExtractorSpec: taps must increase");
    }
    if (deep_tap != block_count - 1)
        throw std::invalid_argument("ExtractorSpec: deep tap must be the last block");
    if (shallow_taps.back() >= deep_tap)
        throw std::invalid_argument("ExtractorSpec: shallow taps must precede the deep tap");
}

ToyFeatureExtractor::ToyFeatureExtractor(const ExtractorSpec& spec, uint64_t frozen_seed)
    : spec_(spec) {
    spec_.validate();
    RandomSource rng(frozen_seed);
    for (size_t i = 0; i < spec_.block_count; ++i) {
        size_t cin = i == 0 ? 1 : spec_.channels;
        double sd = std::sqrt(2.0 / (9.0 * static_cast<double>(cin)));
        conv_w_.push_back(Tensor::randn({spec_.channels, cin, 3, 3}, rng, sd));
        conv_b_.push_back(Tensor::zeros({spec_.channels}));
        // Halve resolution on even blocks: 64x64 input reaches 4x4 at the
        // deep tap of the 8-block default.
        strides_.push_back(i % 2 == 0 ? 2 : 1);
    }
}

FeatureStack ToyFeatureExtractor::extract(const ImageBuffer& grey) const {
    if (grey.space != ColorSpace::Grey)
        throw std::invalid_argument("ToyFeatureExtractor: style features read greyscale only");
    if (grey.data.empty()) throw std::invalid_argument("ToyFeatureExtractor: empty image");

    NoGradGuard ng;
    std::vector<double> px(grey.data.begin(), grey.data.end());
    Tensor x = Tensor::from({1, static_cast<size_t>(grey.height), static_cast<size_t>(grey.width)},
                            std::move(px));
    FeatureStack stack;
    for (size_t i = 0; i < spec_.block_count; ++i) {
        x = gelu(conv2d(x, conv_w_[i], conv_b_[i], strides_[i]));
        bool shallow = std::find(spec_.shallow_taps.begin(), spec_.shallow_taps.end(), i) !=
                       spec_.shallow_taps.end();
        if (!shallow && i != spec_.deep_tap) continue;
        size_t hw = x.dim(1) * x.dim(2);
        Tensor grid = transpose(reshape(x, {spec_.channels, hw}));
        stack.grids.emplace_back(i, grid);
        if (i == spec_.deep_tap)
            stack.cls = reshape(mean_pool_rows(grid), {spec_.channels});
    }
    return stack;
}

void save_feature_stack(const std::string& path, const FeatureStack& stack) {
    std::vector<std::pair<std::string, Tensor>> entries;
    for (const auto& [block, grid] : stack.grids)
        entries.emplace_back("grid." + std::to_string(block), grid);
    if (stack.cls.defined()) entries.emplace_back("cls", stack.cls);
    save_checkpoint(path, entries);
}

FeatureStack load_feature_stack(const std::string& path) {
    FeatureStack stack;
    for (const auto& [name, t] : load_checkpoint(path)) {
        if (name == "cls") {
            stack.cls = t;
        } else if (name.rfind("grid.", 0) == 0) {
            stack.grids.emplace_back(std::stoul(name.substr(5)), t);
        } else {
            throw std::runtime_error("feature stack: unknown entry '" + name + "'");
        }
    }
    std::sort(stack.grids.begin(), stack.grids.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return stack;
}

namespace {

Tensor dense(size_t in, size_t out, RandomSource& rng) {
    return Tensor::randn({in, out}, rng, std::sqrt(1.0 / static_cast<double>(in)), true);
}

}  // namespace

StyleCompressor::StyleCompressor(const ExtractorSpec& spec, size_t token_dim, RandomSource& init)
    : token_dim_(token_dim), shallow_count_(spec.shallow_taps.size()) {
    spec.validate();
    size_t c = spec.channels, d = token_dim;
    for (size_t k = 0; k < shallow_count_; ++k)
        shallow_mlps_.push_back({dense(c, d, init), Tensor::zeros({d}, true), dense(d, d, init),
                                 Tensor::zeros({d}, true)});
    deep_in_w_ = dense(c, d, init);
    deep_in_b_ = Tensor::zeros({d}, true);
    queries_ = Tensor::randn({4, d}, init, 1.0, true);
    for (int l = 0; l < 2; ++l)
        layers_.push_back({dense(d, d, init), dense(d, d, init), dense(d, d, init),
                           dense(d, d, init), dense(d, 2 * d, init), Tensor::zeros({2 * d}, true),
                           dense(2 * d, d, init), Tensor::zeros({d}, true)});
}

TokenSet StyleCompressor::compress(const FeatureStack& stack) const {
    if (stack.grids.size() < shallow_count_ + 1)
        throw std::invalid_argument("StyleCompressor: feature stack is missing grids");
    if (!stack.cls.defined())
        throw std::invalid_argument("StyleCompressor: feature stack is missing cls");

    std::vector<Tensor> tokens;
    for (size_t k = 0; k < shallow_count_; ++k) {
        const auto& mlp = shallow_mlps_[k];
        Tensor h = gelu(add_rowwise(matmul(stack.grids[k].second, mlp[0]), mlp[1]));
        tokens.push_back(mean_pool_rows(add_rowwise(matmul(h, mlp[2]), mlp[3])));
    }

    // Deep grid with cls prepended, compressed by 4 learnable queries.
    Tensor seq = concat_rows({reshape(stack.cls, {1, stack.cls.dim(0)}),
                              stack.grids.back().second});
    Tensor kv = add_rowwise(matmul(seq, deep_in_w_), deep_in_b_);
    Tensor q = queries_;
    for (const XLayer& l : layers_) {
        Tensor kvn = layer_norm(kv);
        Tensor a = attention(matmul(layer_norm(q), l.wq), matmul(kvn, l.wk), matmul(kvn, l.wv),
                             token_dim_);
        q = add(q, matmul(a, l.wo));
        Tensor h = gelu(add_rowwise(matmul(layer_norm(q), l.mlp_w1), l.mlp_b1));
        q = add(q, add_rowwise(matmul(h, l.mlp_w2), l.mlp_b2));
    }
    tokens.push_back(q);
    return {concat_rows(tokens), TokenKind::Style};
}

void StyleCompressor::named_params(const std::string& prefix,
                                   std::vector<std::pair<std::string, Tensor>>& out) const {
    static const char* kMlpNames[] = {"w1", "b1", "w2", "b2"};
    for (size_t k = 0; k < shallow_count_; ++k)
        for (int j = 0; j < 4; ++j)
            out.emplace_back(prefix + "shallow" + std::to_string(k) + "." + kMlpNames[j],
                             shallow_mlps_[k][j]);
    out.emplace_back(prefix + "deep_in.w", deep_in_w_);
    out.emplace_back(prefix + "deep_in.b", deep_in_b_);
    out.emplace_back(prefix + "queries", queries_);
    for (size_t l = 0; l < layers_.size(); ++l) {
        std::string p = prefix + "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "wq", layers_[l].wq);
        out.emplace_back(p + "wk", layers_[l].wk);
        out.emplace_back(p + "wv", layers_[l].wv);
        out.emplace_back(p + "wo", layers_[l].wo);
        out.emplace_back(p + "mlp.w1", layers_[l].mlp_w1);
        out.emplace_back(p + "mlp.b1", layers_[l].mlp_b1);
        out.emplace_back(p + "mlp.w2", layers_[l].mlp_w2);
        out.emplace_back(p + "mlp.b2", layers_[l].mlp_b2);
    }
}

ColorEmbedder::ColorEmbedder(size_t token_dim, RandomSource& init) : token_dim_(token_dim) {
    const size_t hidden = 256;
    w1_ = dense(180, hidden, init);
    b1_ = Tensor::zeros({hidden}, true);
    // Start the MLP mixing small: the dominant-bin slot features below carry
    // the useful signal at initialization, and tokens should begin as clean
    // per-color descriptors (mass in dim 0, latent-scale color in dims 1-3).
    w2_ = Tensor::randn({hidden, 4 * token_dim},  init,
                        0.1 * std::sqrt(1.0 / static_cast<double>(hidden)), true);
    b2_ = Tensor::zeros({4 * token_dim}, true);
    if (token_dim < 4)
        throw std::invalid_argument("ColorEmbedder: token_dim must be at least 4");
    std::vector<double> ws(4 * token_dim, 0.0);
    for (size_t k = 0; k < 4; ++k) ws[k * token_dim + k] = 1.0;
    ws_ = Tensor::from({4, token_dim}, std::move(ws), true);
    // fixed featurization table: the sRGB coordinates of each palette bin
    Palette pal = build_palette("default");
    bin_rgb_.reserve(180);
    const double sats[5] = {0.2, 0.4, 0.6, 0.8, 1.0};
    const double vals[3] = {1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (size_t k = 0; k < pal.entries.size(); ++k) {
        double h = 360.0 * static_cast<double>(k / 15) / 12.0;
        bin_rgb_.push_back(hsv_to_srgb(h, sats[(k % 15) / 3], vals[k % 3]));
    }
}

TokenSet ColorEmbedder::embed(const ColorHistogram& hist) const {
    if (hist.bins.size() != 180)
        throw std::invalid_argument("ColorEmbedder: histogram must have 180 bins");
    // histograms are sparse probability vectors (a handful of bins holding all
    // the mass); rescale so the nonzero entries carry unit-order magnitude and
    // the embedding starts at a usable scale
    std::vector<double> v(hist.bins.begin(), hist.bins.end());
    const double gain = std::sqrt(180.0);
    for (double& x : v) x *= gain;
    Tensor x = Tensor::from({1, 180}, std::move(v));
    Tensor h = gelu(add_rowwise(matmul(x, w1_), b1_));
    Tensor y = add_rowwise(matmul(h, w2_), b2_);
    // Dominant-bin featurization: a 4-token set has to separate the
    // individual colors present, and extracting "the k-th dominant color"
    // from a 180-bin vector is a rank operation a small trained MLP does
    // not discover at this scale. Feed it directly: slot k carries the mass
    // and color (in latent scale, 2c-1) of the k-th heaviest bin, and a
    // trainable per-slot projection mixes it into the corresponding token,
    // so tokens are color-identified from initialization on.
    std::array<size_t, 180> order;
    for (size_t k = 0; k < 180; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return hist.bins[a] > hist.bins[b];
    });
    std::vector<double> slots(4 * 4, 0.0);
    for (size_t k = 0; k < 4; ++k) {
        size_t bin = order[k];
        if (hist.bins[bin] <= 0.0) continue;
        slots[4 * k] = hist.bins[bin];
        for (size_t c = 0; c < 3; ++c)
            slots[4 * k + 1 + c] = 2.0 * bin_rgb_[bin][c] - 1.0;
    }
    Tensor tokens = add(reshape(y, {4, token_dim_}),
                        matmul(Tensor::from({4, 4}, std::move(slots)), ws_));
    return {tokens, TokenKind::Color};
}

void ColorEmbedder::named_params(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back(prefix + "w1", w1_);
    out.emplace_back(prefix + "b1", b1_);
    out.emplace_back(prefix + "w2", w2_);
    out.emplace_back(prefix + "b2", b2_);
    out.emplace_back(prefix + "ws", ws_);
}

}  // namespace cdst
