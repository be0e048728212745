#pragma once

#include <iosfwd>
#include <string>

#include "cdst/edges.hpp"
#include "cdst/training.hpp"

namespace cdst {

struct WorkflowPreset {
    double style_weight = 0.9;           // scales the high-range lambda_s only
    double color_weight = 1.0;
    double controlnet_weight = 1.0;
    double content_prior_strength = 0.6;  // lambda_P
    double cfg_scale = 4.0;
    size_t steps = 30;
    double gcc_alpha = 0.8;
    // characteristics-preserved color stream weight (0.0 is reported to make
    // no visible difference; kept at 1.0 by default)
    double cp_color_weight = 1.0;

    void validate() const;
};

// Inference policy for a preset: the fixed 0.2 low range stays, the 0.9 high
// range is replaced by style_weight, lambda_c by color_weight.
InjectionPolicy preset_policy(const WorkflowPreset& preset, const BlockRegistry& reg,
                              double color_weight_override = -1.0);

ImageBuffer style_color_prompt(const CdstModel& model, const DiffusionSchedule& sched,
                               const ImageBuffer& style_img, const ImageBuffer& color_img,
                               size_t prompt_key, const WorkflowPreset& preset, uint64_t seed);

ImageBuffer style_color_content(const CdstModel& model, const DiffusionSchedule& sched,
                                const ImageBuffer& style_img, const ImageBuffer& color_img,
                                const ImageBuffer& content_img, const WorkflowPreset& preset,
                                uint64_t seed);

// Color reference and conditioning both come from the content image; sampling
// starts from the content prior latent. With zero denoising steps
// (content_prior_strength = 1) the round-tripped content returns unchanged.
ImageBuffer characteristics_preserved(const CdstModel& model, const DiffusionSchedule& sched,
                                      const ImageBuffer& style_img,
                                      const ImageBuffer& content_img,
                                      const WorkflowPreset& preset, uint64_t seed);

struct PairMetrics {
    double color_distance = 0.0;
    double luma_mse = 0.0;
};

PairMetrics evaluate_pair(const ImageBuffer& out, const ImageBuffer& color_ref,
                          const Palette& palette);

// One JSON object per line: {"id", "color_distance", "luma_mse", "preset", "seed"}.
void write_metrics_line(std::ostream& os, const std::string& id, const PairMetrics& metrics,
                        const WorkflowPreset& preset, uint64_t seed);

}  // namespace cdst
