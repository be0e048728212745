#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cdst/denoiser.hpp"
#include "cdst/tensor.hpp"

namespace cdst {

struct DiffusionSchedule {
    size_t T = 0;
    std::vector<double> alpha_bar;  // T+1 entries, alpha_bar[0] = 1, strictly decreasing
};

// Cumulative products of (1 - beta_i) with beta interpolated linearly in
// sqrt(beta) between the endpoints ("scaled linear").
DiffusionSchedule make_schedule(size_t T = 1000, double beta_start = 0.00085,
                                double beta_end = 0.012);

// Noised content latent at t_P = round((1 - lambda_P) * T).
std::pair<Tensor, size_t> make_content_prior(const Tensor& content_latent, double lambda_P,
                                             const DiffusionSchedule& sched, uint64_t seed);

// Uniformly spaced descending timestep grid: round(T * (steps - i) / steps).
std::vector<size_t> ddim_timesteps(const DiffusionSchedule& sched, size_t steps);

// Deterministic (eta = 0) DDIM update from t to t_prev.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, size_t t, size_t t_prev,
                 const DiffusionSchedule& sched);

// eps_uncond + scale * (eps_cond - eps_uncond)
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double scale);

struct SampleRequest {
    TokenSet e_t, e_s, e_c;
    InjectionPolicy policy;
    size_t steps = 30;
    double cfg_scale = 4.0;
    uint64_t seed = 0;
    bool has_content_prior = false;
    Tensor content_latent;
    double lambda_P = 0.0;
    const std::vector<Tensor>* cond = nullptr;
    // default unconditional branch zeroes the text tokens only
    bool uncond_drops_all_streams = false;
    // project the implied x_0 prediction onto [-1,1] before each DDIM update;
    // exact predictions of in-range data are untouched
    bool clip_denoised = true;
};

// Reverse DDIM loop; with a content prior the grid is truncated to start at
// the largest scheduled timestep <= t_P (lambda_P = 1 means zero steps).
Tensor sample(const SampleRequest& req, const ToyUNet& unet, const StreamProjections& proj,
              const DiffusionSchedule& sched);

}  // namespace cdst
