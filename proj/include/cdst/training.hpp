#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdst/colorlab.hpp"
#include "cdst/denoiser.hpp"
#include "cdst/embed.hpp"
#include "cdst/optim.hpp"
#include "cdst/sampler.hpp"

namespace cdst {

enum class TextureFamily { Stripes, Dots, Checker, Waves };

struct SynthSpec {
    TextureFamily family = TextureFamily::Stripes;
    double frequency = 4.0;
    double angle = 0.0;       // radians
    double thickness = 0.5;   // family-specific shape parameter
    std::vector<std::array<float, 3>> palette;  // 2-4 sRGB colors
    int size = 64;
    uint64_t seed = 0;
};

// Deterministic procedural texture: an intensity field quantized into bands,
// each band painted with one palette color.
ImageBuffer gen_synthetic(const SynthSpec& spec);

// sRGB colors sitting exactly on the quantization palette grid.
std::vector<std::array<float, 3>> default_palette_pool();

struct DatasetSpec {
    std::vector<TextureFamily> families = {TextureFamily::Stripes, TextureFamily::Dots,
                                           TextureFamily::Checker, TextureFamily::Waves};
    std::vector<std::array<float, 3>> palette_pool = default_palette_pool();
    size_t count = 64;
    uint64_t seed = 0;
    int size = 64;
};

// Texture family and palette are drawn independently (factorized dataset).
std::vector<SynthSpec> sample_dataset(const DatasetSpec& spec);

struct TrainConfig {
    size_t steps = 2000;
    size_t batch = 8;
    size_t grad_accum = 1;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double text_dropout = 0.1;
    uint64_t seed = 0;

    void validate() const;
};

// The full trainable bundle: frozen UNet base and feature extractor plus the
// trainable stream projections, compressors, and caption table.
class CdstModel {
 public:
    CdstModel(uint64_t frozen_seed, uint64_t init_seed, size_t token_dim = 64);

    const ToyUNet& unet() const { return unet_; }
    StreamProjections& proj() { return proj_; }
    const StreamProjections& proj() const { return proj_; }
    size_t token_dim() const { return token_dim_; }

    TokenSet style_tokens(const ImageBuffer& srgb) const;
    TokenSet style_tokens(const FeatureStack& stack) const;
    TokenSet color_tokens(const ImageBuffer& srgb) const;
    TokenSet color_tokens(const ColorHistogram& hist) const;
    TokenSet text_token(size_t caption_id) const;  // 16-entry learned table
    TokenSet empty_text_token() const;

    FeatureStack features(const ImageBuffer& srgb) const;
    const Palette& palette() const { return palette_; }

    std::vector<std::pair<std::string, Tensor>> trainable_params() const;
    void save(const std::string& path) const;
    void load(const std::string& path);

 private:
    size_t token_dim_;
    ToyUNet unet_;
    ToyFeatureExtractor extractor_;
    RandomSource init_rng_;
    StyleCompressor style_;
    ColorEmbedder color_;
    StreamProjections proj_;
    Tensor caption_;  // [16, token_dim]
    Palette palette_;
};

struct TrainItem {
    Tensor latent;          // cached toy_encode of the image
    FeatureStack features;  // cached greyscale feature stack
    ColorHistogram hist;
    size_t caption_id = 0;
};

TrainItem make_train_item(const CdstModel& model, const ImageBuffer& img, size_t caption_id);

class Trainer {
 public:
    Trainer(CdstModel& model, const TrainConfig& cfg, const DiffusionSchedule& sched);

    // One optimizer update over batch * grad_accum sampled items; returns the
    // mean per-image reconstruction loss.
    double step(const std::vector<TrainItem>& dataset);

    // Full run; appends "step,loss" lines to loss_csv when non-empty.
    std::vector<double> run(const std::vector<TrainItem>& dataset,
                            const std::string& loss_csv = "");

 private:
    double micro_batch(const std::vector<TrainItem>& dataset, size_t count, double scale);

    CdstModel& model_;
    TrainConfig cfg_;
    DiffusionSchedule sched_;
    InjectionPolicy policy_;
    std::vector<Tensor> params_;
    AdamW opt_;
    RandomSource rng_;
};

}  // namespace cdst
