#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdst/embed.hpp"
#include "cdst/image.hpp"
#include "cdst/tensor.hpp"

namespace cdst {

struct BlockRegistry {
    size_t total = 0;
    std::pair<size_t, size_t> encoder_range;  // [begin, end)
    std::pair<size_t, size_t> middle_range;
    std::pair<size_t, size_t> decoder_range;
};

// SDXL cross-attention layout: 70 blocks, encoder 24, middle 10, decoder 36.
BlockRegistry build_sdxl_layout();

struct InjectionPolicy {
    std::vector<double> lambda_s;
    std::vector<double> lambda_c;
    std::vector<uint8_t> style_active;

    size_t size() const { return lambda_s.size(); }
    void validate() const;
};

// Style restricted to blocks [0,14) at 0.2 and [44,70) at 0.9; color everywhere.
InjectionPolicy cdst_inference_policy(const BlockRegistry& reg);
// Training maps both streams to every block at weight 1.
InjectionPolicy training_policy(const BlockRegistry& reg);

void save_policy(const std::string& path, const InjectionPolicy& policy);
InjectionPolicy load_policy(const std::string& path);

// Trainable per-block K/V projections for the style and color streams.
struct StreamProjections {
    struct Block {
        Tensor wk_s, wv_s, wk_c, wv_c;  // [d_e, d_block]
    };
    std::vector<Block> blocks;
    size_t token_dim = 0;

    static StreamProjections init(const std::vector<size_t>& block_widths, size_t token_dim,
                                  RandomSource& rng);
    void named_params(std::vector<std::pair<std::string, Tensor>>& out) const;
    void load_from(const std::map<std::string, Tensor>& entries);
};

// Frozen query/text-KV weights of one cross-attention site.
struct AttnBase {
    Tensor wq;    // [c, c]
    Tensor wk_t;  // [d_e, c]
    Tensor wv_t;  // [d_e, c]
};

// x: [n, c] query tokens. Residual output of the two-stream attention:
// x + attn(Q,K_t,V_t) + lambda_s*attn(Q,K_s,V_s) + lambda_c*attn(Q,K_c,V_c).
Tensor cross_attention_block(const Tensor& x, const AttnBase& base, const TokenSet& e_t,
                             const TokenSet& e_s, const TokenSet& e_c,
                             const StreamProjections& proj, const InjectionPolicy& policy,
                             size_t idx);

// Small UNet over 4x32x32 latents carrying the full 70-block layout:
// encoder 0-3 @16ch/32x32, 4-13 @64ch/16x16 and 14-23 @64ch/8x8, middle
// 24-33 @64ch/8x8, decoder 34-63 @64ch/8x8 and 64-69 @24ch/32x32. The head
// stage runs at full latent resolution: channels 16-19 carry the noisy
// latent verbatim and 20-23 are written only by the trainable attention
// residuals, which the fixed output conv turns into the clean-image
// correction. Skip connections are additive. The base (convs, query and
// text projections, timestep maps) is frozen at construction.
class ToyUNet {
 public:
    ToyUNet(uint64_t frozen_seed, size_t token_dim);

    Tensor forward(const Tensor& latent, size_t t, const TokenSet& e_t, const TokenSet& e_s,
                   const TokenSet& e_c, const StreamProjections& proj,
                   const InjectionPolicy& policy,
                   const std::vector<Tensor>* cond = nullptr) const;

    const BlockRegistry& registry() const { return registry_; }
    // channel width at each cross-attention site, indexed 0..69
    const std::vector<size_t>& block_widths() const { return widths_; }
    size_t token_dim() const { return token_dim_; }
    // frozen base weights, for freeze-invariance checks
    void frozen_named_params(std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
    Tensor stage(Tensor x, size_t stage_idx, const Tensor& temb) const;
    Tensor run_blocks(Tensor x, size_t begin, size_t end, const TokenSet& e_t,
                      const TokenSet& e_s, const TokenSet& e_c, const StreamProjections& proj,
                      const InjectionPolicy& policy) const;

    static constexpr size_t kHeadT = 1000;

    BlockRegistry registry_;
    size_t token_dim_;
    std::vector<size_t> widths_;
    std::vector<double> head_alpha_bar_;  // fixed coefficients of the output head

    struct Conv {
        Tensor w, b;
    };
    Conv stem_, down1_, down2_, merge1_, out_, widen_, inj_;
    std::vector<Conv> res_;        // one residual conv per stage
    std::vector<Tensor> time_w_;   // per-stage [time_dim, stage channels]
    std::vector<Tensor> time_b_;
    std::vector<AttnBase> attn_;   // one per cross-attention site
};

// Frozen conv encoder over a 64x64 edge map; one residual per encoder
// resolution (16ch@32x32, 64ch@16x16, 64ch@8x8), scaled by controlnet_weight.
class ConditionEncoder {
 public:
    explicit ConditionEncoder(uint64_t frozen_seed);
    std::vector<Tensor> residuals(const EdgeMap& edges, double controlnet_weight) const;

 private:
    Tensor e0w_, e0b_, r0w_, r0b_;
    Tensor e1w_, e1b_, r1w_, r1b_;
    Tensor e2w_, e2b_, r2w_, r2b_;
};

// Fixed toy latent pair: 2x average-pool encode to 4 channels (RGB + mean),
// values mapped to [-1,1]; nearest-neighbour decode with clamping.
Tensor toy_encode(const ImageBuffer& img);
ImageBuffer toy_decode(const Tensor& latent);

}  // namespace cdst
