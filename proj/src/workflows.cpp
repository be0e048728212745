#include "cdst/workflows.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "cdst/calibrate.hpp"
#include "json.hpp"

namespace cdst {

namespace {
// frozen seed of the shared toy conditioning encoder
constexpr uint64_t kCondSeed = 0x1c0de;
}

void WorkflowPreset::validate() const {
    if (style_weight < 0.0 || color_weight < 0.0 || controlnet_weight < 0.0 ||
        content_prior_strength < 0.0 || content_prior_strength > 1.0 || cfg_scale < 0.0 ||
        steps == 0 || gcc_alpha < 0.0 || gcc_alpha > 1.0 || cp_color_weight < 0.0)
        throw std::invalid_argument("WorkflowPreset: values out of range");
}

InjectionPolicy preset_policy(const WorkflowPreset& preset, const BlockRegistry& reg,
                              double color_weight_override) {
    preset.validate();
    InjectionPolicy p = cdst_inference_policy(reg);
    double cw = color_weight_override >= 0.0 ? color_weight_override : preset.color_weight;
    for (size_t i = 0; i < p.size(); ++i) {
        // the 0.2 low range is pinned; "style weight" means the high range
        if (p.style_active[i] && i >= 44) p.lambda_s[i] = preset.style_weight;
        p.lambda_c[i] = cw;
    }
    return p;
}

ImageBuffer style_color_prompt(const CdstModel& model, const DiffusionSchedule& sched,
                               const ImageBuffer& style_img, const ImageBuffer& color_img,
                               size_t prompt_key, const WorkflowPreset& preset, uint64_t seed) {
    NoGradGuard ng;
    SampleRequest req;
    req.e_t = model.text_token(prompt_key);
    req.e_s = model.style_tokens(style_img);
    req.e_c = model.color_tokens(color_img);
    req.policy = preset_policy(preset, model.unet().registry());
    req.steps = preset.steps;
    req.cfg_scale = preset.cfg_scale;
    req.seed = seed;
    ImageBuffer out = toy_decode(sample(req, model.unet(), model.proj(), sched));
    return global_color_calibration(out, color_img, preset.gcc_alpha);
}

ImageBuffer style_color_content(const CdstModel& model, const DiffusionSchedule& sched,
                                const ImageBuffer& style_img, const ImageBuffer& color_img,
                                const ImageBuffer& content_img, const WorkflowPreset& preset,
                                uint64_t seed) {
    NoGradGuard ng;
    ConditionEncoder enc(kCondSeed);
    std::vector<Tensor> res = enc.residuals(canny(content_img), preset.controlnet_weight);

    SampleRequest req;
    req.e_t = model.empty_text_token();
    req.e_s = model.style_tokens(style_img);
    req.e_c = model.color_tokens(color_img);
    req.policy = preset_policy(preset, model.unet().registry());
    req.steps = preset.steps;
    req.cfg_scale = preset.cfg_scale;
    req.seed = seed;
    req.cond = &res;
    ImageBuffer out = toy_decode(sample(req, model.unet(), model.proj(), sched));
    return global_color_calibration(out, color_img, preset.gcc_alpha);
}

ImageBuffer characteristics_preserved(const CdstModel& model, const DiffusionSchedule& sched,
                                      const ImageBuffer& style_img,
                                      const ImageBuffer& content_img,
                                      const WorkflowPreset& preset, uint64_t seed) {
    NoGradGuard ng;
    ConditionEncoder enc(kCondSeed);
    std::vector<Tensor> res = enc.residuals(canny(content_img), preset.controlnet_weight);

    SampleRequest req;
    req.e_t = model.empty_text_token();
    req.e_s = model.style_tokens(style_img);
    req.e_c = model.color_tokens(content_img);  // the content is the color reference
    req.policy = preset_policy(preset, model.unet().registry(), preset.cp_color_weight);
    req.steps = preset.steps;
    req.cfg_scale = preset.cfg_scale;
    req.seed = seed;
    req.cond = &res;
    req.has_content_prior = true;
    req.content_latent = toy_encode(content_img);
    req.lambda_P = preset.content_prior_strength;

    Tensor latent = sample(req, model.unet(), model.proj(), sched);
    ImageBuffer out = toy_decode(latent);

    // with zero denoising steps the round trip must come back untouched
    size_t t_P = static_cast<size_t>(
        std::llround((1.0 - req.lambda_P) * static_cast<double>(sched.T)));
    bool denoised = false;
    for (size_t t : ddim_timesteps(sched, preset.steps)) denoised = denoised || t <= t_P;
    if (!denoised) return out;
    return global_color_calibration(out, content_img, preset.gcc_alpha);
}

PairMetrics evaluate_pair(const ImageBuffer& out, const ImageBuffer& color_ref,
                          const Palette& palette) {
    PairMetrics m;
    m.color_distance = color_distance(extract_histogram(out, palette),
                                      extract_histogram(color_ref, palette));
    ImageBuffer a = greyscale(out), b = greyscale(color_ref);
    if (a.data.size() != b.data.size())
        throw std::invalid_argument("evaluate_pair: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    m.luma_mse = acc / static_cast<double>(a.data.size());
    return m;
}

void write_metrics_line(std::ostream& os, const std::string& id, const PairMetrics& metrics,
                        const WorkflowPreset& preset, uint64_t seed) {
    nlohmann::json j;
    j["id"] = id;
    j["color_distance"] = metrics.color_distance;
    j["luma_mse"] = metrics.luma_mse;
    j["preset"] = {{"style_weight", preset.style_weight},
                   {"color_weight", preset.color_weight},
                   {"controlnet_weight", preset.controlnet_weight},
                   {"content_prior_strength", preset.content_prior_strength},
                   {"cfg_scale", preset.cfg_scale},
                   {"steps", preset.steps},
                   {"gcc_alpha", preset.gcc_alpha}};
    j["seed"] = seed;
    os << j.dump() << "\n";
}

}  // namespace cdst
