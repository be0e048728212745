#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cdst/colorlab.hpp"
#include "cdst/image.hpp"
#include "cdst/tensor.hpp"

namespace cdst {

// Taps into the frozen feature stack. The default mirrors the shallow/deep
// split at desk scale; the "paper-scale" preset (50 blocks, taps {5,11,17},
// deep = last) is kept for imported features.
struct ExtractorSpec {
    size_t block_count = 8;
    std::vector<size_t> shallow_taps = {1, 3, 5};
    size_t deep_tap = 7;
    size_t channels = 32;

    void validate() const;
    static ExtractorSpec toy() { return {}; }
    static ExtractorSpec paper_scale() { return {50, {5, 11, 17}, 49, 1536}; }
};

struct FeatureStack {
    std::vector<std::pair<size_t, Tensor>> grids;  // (block index, [h*w, c]), ascending
    Tensor cls;                                    // [c]; may be undefined
};

enum class TokenKind { Style, Color, Text };

struct TokenSet {
    Tensor tokens;  // [n, d_e]
    TokenKind kind;
};

// Frozen random-weight conv stack over a single-channel image. Grids are
// emitted at the shallow taps and the deep tap; cls is the mean-pooled deep
// grid. Deterministic in (spec, seed).
class ToyFeatureExtractor {
 public:
    ToyFeatureExtractor(const ExtractorSpec& spec, uint64_t frozen_seed);

    FeatureStack extract(const ImageBuffer& grey) const;
    const ExtractorSpec& spec() const { return spec_; }

 private:
    ExtractorSpec spec_;
    std::vector<Tensor> conv_w_, conv_b_;
    std::vector<int> strides_;
};

// Checkpoint import/export with reserved names "grid.<block>" and "cls".
void save_feature_stack(const std::string& path, const FeatureStack& stack);
FeatureStack load_feature_stack(const std::string& path);

// Trainable: shallow per-token MLPs mean-pooled to one token each, plus a
// 2-layer single-head query transformer compressing the deep grid (with cls
// prepended) into 4 tokens. Output is the 7-token style embedding.
class StyleCompressor {
 public:
    StyleCompressor(const ExtractorSpec& spec, size_t token_dim, RandomSource& init);

    TokenSet compress(const FeatureStack& stack) const;
    size_t token_dim() const { return token_dim_; }

    void named_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
    size_t token_dim_;
    size_t shallow_count_;
    // per shallow tap: w1 [c,d], b1 [d], w2 [d,d], b2 [d]
    std::vector<std::vector<Tensor>> shallow_mlps_;
    Tensor deep_in_w_, deep_in_b_;  // c -> d
    Tensor queries_;                // [4, d]
    struct XLayer {
        Tensor wq, wk, wv, wo;      // [d,d]
        Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<XLayer> layers_;
};

// Trainable: 180 -> MLP -> 4 tokens of token_dim.
class ColorEmbedder {
 public:
    ColorEmbedder(size_t token_dim, RandomSource& init);

    TokenSet embed(const ColorHistogram& hist) const;

    void named_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
    size_t token_dim_;
    Tensor w1_, b1_, w2_, b2_, ws_;
    std::vector<std::array<double, 3>> bin_rgb_;
};

}  // namespace cdst
