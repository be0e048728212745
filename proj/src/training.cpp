#include "cdst/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cdst/checkpoint.hpp"

namespace cdst {

namespace {
constexpr double kTau = 6.283185307179586477;
}

ImageBuffer gen_synthetic(const SynthSpec& spec) {
    if (spec.size < 2) throw std::invalid_argument("gen_synthetic: size too small");
    if (spec.palette.size() < 2 || spec.palette.size() > 4)
        throw std::invalid_argument("gen_synthetic: palette must hold 2-4 colors");

    double phase = RandomSource(spec.seed).uniform();
    double ca = std::cos(spec.angle), sa = std::sin(spec.angle);
    size_t bands = spec.palette.size();

    ImageBuffer img(spec.size, spec.size, ColorSpace::SRGB);
    for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x) {
            double u = (x * ca + y * sa) * spec.frequency / spec.size;
            double v = (-x * sa + y * ca) * spec.frequency / spec.size;
            double s = 0.0;
            switch (spec.family) {
                case TextureFamily::Stripes:
                    s = 0.5 + 0.5 * std::sin(kTau * (u + phase));
                    break;
                case TextureFamily::Dots:
                    s = 0.5 + 0.5 * std::sin(kTau * (u + phase)) * std::sin(kTau * (v + phase));
                    break;
                case TextureFamily::Checker:
                    s = static_cast<double>(
                        (static_cast<long long>(std::floor(u + phase)) +
                         static_cast<long long>(std::floor(v + phase))) &
                        1LL);
                    break;
                case TextureFamily::Waves:
                    s = 0.5 + 0.5 * std::sin(kTau * (u + spec.thickness * std::sin(kTau * v) +
                                                     phase));
                    break;
            }
            size_t band = std::min(bands - 1,
                                   static_cast<size_t>(s * static_cast<double>(bands)));
            const auto& c = spec.palette[band];
            float* px = &img.data[3 * (static_cast<size_t>(y) * spec.size + x)];
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    return img;
}

std::vector<std::array<float, 3>> default_palette_pool() {
    // saturated and mid-tone entries of the 12x15 quantization grid
    std::vector<std::array<float, 3>> pool;
    for (int hue = 0; hue < 12; ++hue)
        for (double v : {2.0 / 3.0, 1.0}) {
            auto rgb = hsv_to_srgb(360.0 * hue / 12.0, 1.0, v);
            pool.push_back({static_cast<float>(rgb[0]), static_cast<float>(rgb[1]),
                            static_cast<float>(rgb[2])});
        }
    return pool;
}

std::vector<SynthSpec> sample_dataset(const DatasetSpec& spec) {
    if (spec.families.empty() || spec.palette_pool.size() < 2 || spec.count == 0)
        throw std::invalid_argument("sample_dataset: empty spec");
    RandomSource rng(spec.seed);
    std::vector<SynthSpec> out;
    for (size_t i = 0; i < spec.count; ++i) {
        SynthSpec s;
        // independent draws keep texture and palette factorized
        s.family = spec.families[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(spec.families.size()) - 1))];
        size_t ncolor = static_cast<size_t>(rng.uniform_int(2, 4));
        std::vector<size_t> picked;
        while (picked.size() < ncolor) {
            size_t k = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(spec.palette_pool.size()) - 1));
            bool dup = false;
            for (size_t p : picked) dup = dup || p == k;
            if (!dup) picked.push_back(k);
        }
        for (size_t p : picked) s.palette.push_back(spec.palette_pool[p]);
        s.frequency = 2.0 + 6.0 * rng.uniform();
        s.angle = kTau / 2.0 * rng.uniform();
        s.thickness = 0.2 + 0.6 * rng.uniform();
        s.size = spec.size;
        s.seed = rng.next_u64();
        out.push_back(std::move(s));
    }
    return out;
}

void TrainConfig::validate() const {
    if (steps == 0 || batch == 0 || grad_accum == 0 || lr <= 0.0 || weight_decay < 0.0 ||
        text_dropout < 0.0 || text_dropout > 1.0)
        throw std::invalid_argument("TrainConfig: values out of range");
}

CdstModel::CdstModel(uint64_t frozen_seed, uint64_t init_seed, size_t token_dim)
    : token_dim_(token_dim),
      unet_(frozen_seed, token_dim),
      extractor_(ExtractorSpec::toy(), frozen_seed + 1),
      init_rng_(init_seed),
      style_(ExtractorSpec::toy(), token_dim, init_rng_),
      color_(token_dim, init_rng_),
      proj_(StreamProjections::init(unet_.block_widths(), token_dim, init_rng_)),
      caption_(Tensor::randn({16, token_dim}, init_rng_, 1.0, true)),
      palette_(build_palette("default")) {}

FeatureStack CdstModel::features(const ImageBuffer& srgb) const {
    return extractor_.extract(greyscale(srgb));
}

TokenSet CdstModel::style_tokens(const ImageBuffer& srgb) const {
    return style_.compress(features(srgb));
}

TokenSet CdstModel::style_tokens(const FeatureStack& stack) const {
    return style_.compress(stack);
}

TokenSet CdstModel::color_tokens(const ImageBuffer& srgb) const {
    return color_.embed(extract_histogram(srgb, palette_));
}

TokenSet CdstModel::color_tokens(const ColorHistogram& hist) const {
    return color_.embed(hist);
}

TokenSet CdstModel::text_token(size_t caption_id) const {
    if (caption_id >= caption_.dim(0))
        throw std::invalid_argument("CdstModel: caption id out of range");
    std::vector<double> onehot(caption_.dim(0), 0.0);
    onehot[caption_id] = 1.0;
    Tensor sel = Tensor::from({1, caption_.dim(0)}, std::move(onehot));
    return {matmul(sel, caption_), TokenKind::Text};
}

TokenSet CdstModel::empty_text_token() const {
    return {Tensor::zeros({1, token_dim_}), TokenKind::Text};
}

std::vector<std::pair<std::string, Tensor>> CdstModel::trainable_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    proj_.named_params(out);
    style_.named_params("style.", out);
    color_.named_params("color.", out);
    out.emplace_back("caption.table", caption_);
    return out;
}

void CdstModel::save(const std::string& path) const {
    save_checkpoint(path, trainable_params());
}

void CdstModel::load(const std::string& path) {
    auto entries = load_checkpoint(path);
    for (auto& [name, t] : trainable_params()) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error("checkpoint is missing entry '" + name + "'");
        if (it->second.shape() != t.shape())
            throw std::runtime_error("checkpoint shape mismatch at '" + name + "'");
        t.value() = it->second.value();
    }
}

TrainItem make_train_item(const CdstModel& model, const ImageBuffer& img, size_t caption_id) {
    TrainItem item;
    item.latent = toy_encode(img);
    item.features = model.features(img);
    item.hist = extract_histogram(img, model.palette());
    item.caption_id = caption_id;
    return item;
}

Trainer::Trainer(CdstModel& model, const TrainConfig& cfg, const DiffusionSchedule& sched)
    : model_(model),
      cfg_(cfg),
      sched_(sched),
      policy_(training_policy(model.unet().registry())),
      opt_(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
      rng_(cfg.seed) {
    cfg_.validate();
    for (auto& [name, t] : model_.trainable_params()) params_.push_back(t);
}

double Trainer::micro_batch(const std::vector<TrainItem>& dataset, size_t count, double scale_f) {
    double total = 0.0;
    for (size_t b = 0; b < count; ++b) {
        const TrainItem& item = dataset[static_cast<size_t>(
            rng_.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1))];
        size_t t = static_cast<size_t>(rng_.uniform_int(1, static_cast<int64_t>(sched_.T)));
        double ab = sched_.alpha_bar[t];
        double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        std::vector<double> noise(item.latent.size()), noisy(item.latent.size());
        for (size_t i = 0; i < noise.size(); ++i) {
            noise[i] = rng_.normal();
            noisy[i] = sa * item.latent.value()[i] + sb * noise[i];
        }
        bool drop_text = rng_.uniform() < cfg_.text_dropout;
        Tensor eps = Tensor::from(item.latent.shape(), std::move(noise));
        Tensor x_t = Tensor::from(item.latent.shape(), std::move(noisy));

        TokenSet e_t = drop_text ? model_.empty_text_token() : model_.text_token(item.caption_id);
        TokenSet e_s = model_.style_tokens(item.features);
        TokenSet e_c = model_.color_tokens(item.hist);
        Tensor loss = mse(model_.unet().forward(x_t, t, e_t, e_s, e_c, model_.proj(), policy_),
                          eps);
        double l = loss.item();
        if (!std::isfinite(l)) throw std::runtime_error("training diverged: non-finite loss");
        scale(loss, scale_f).backward();
        total += l;
    }
    return total;
}

double Trainer::step(const std::vector<TrainItem>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("Trainer: empty dataset");
    double total = 0.0;
    double scale_f = 1.0 / static_cast<double>(cfg_.batch * cfg_.grad_accum);
    for (size_t a = 0; a < cfg_.grad_accum; ++a)
        total += micro_batch(dataset, cfg_.batch, scale_f);
    opt_.step(params_);
    opt_.zero_grad(params_);
    return total * scale_f;
}

std::vector<double> Trainer::run(const std::vector<TrainItem>& dataset,
                                 const std::string& loss_csv) {
    std::vector<double> losses;
    std::ofstream csv;
    if (!loss_csv.empty()) {
        csv.open(loss_csv);
        if (!csv) throw std::runtime_error("cannot write loss curve: " + loss_csv);
        csv << "step,loss\n";
    }
    for (size_t s = 1; s <= cfg_.steps; ++s) {
        double l = step(dataset);
        losses.push_back(l);
        if (csv.is_open()) csv << s << "," << l << "\n";
    }
    return losses;
}

}  // namespace cdst
