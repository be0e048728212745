#include "cdst/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdst {

DiffusionSchedule make_schedule(size_t T, double beta_start, double beta_end) {
    if (T < 1 || beta_start <= 0.0 || beta_end >= 1.0 || beta_start >= beta_end)
        throw std::invalid_argument("make_schedule: need 0 < beta_start < beta_end < 1, T >= 1");
    DiffusionSchedule s;
    s.T = T;
    s.alpha_bar.assign(T + 1, 1.0);
    double sb0 = std::sqrt(beta_start), sb1 = std::sqrt(beta_end);
    for (size_t i = 1; i <= T; ++i) {
        double f = T == 1 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(T - 1);
        double sb = sb0 + (sb1 - sb0) * f;
        s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - sb * sb);
    }
    return s;
}

std::pair<Tensor, size_t> make_content_prior(const Tensor& content_latent, double lambda_P,
                                             const DiffusionSchedule& sched, uint64_t seed) {
    if (lambda_P < 0.0 || lambda_P > 1.0)
        throw std::invalid_argument("make_content_prior: lambda_P must lie in [0,1]");
    size_t t_P = static_cast<size_t>(
        std::llround((1.0 - lambda_P) * static_cast<double>(sched.T)));
    double ab = sched.alpha_bar.at(t_P);
    RandomSource rng(seed);
    std::vector<double> v(content_latent.size());
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = a * content_latent.value()[i] + b * rng.normal();
    return {Tensor::from(content_latent.shape(), std::move(v)), t_P};
}

std::vector<size_t> ddim_timesteps(const DiffusionSchedule& sched, size_t steps) {
    if (steps < 1 || steps > sched.T)
        throw std::invalid_argument("ddim_timesteps: steps must lie in [1, T]");
    std::vector<size_t> ts;
    for (size_t i = 0; i < steps; ++i)
        ts.push_back(static_cast<size_t>(std::llround(
            static_cast<double>(sched.T) * static_cast<double>(steps - i) /
            static_cast<double>(steps))));
    return ts;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, size_t t, size_t t_prev,
                 const DiffusionSchedule& sched) {
    if (x_t.shape() != eps_hat.shape())
        throw std::invalid_argument("ddim_step: latent and prediction shapes differ");
    if (t_prev >= t || t > sched.T)
        throw std::invalid_argument("ddim_step: need t_prev < t <= T");
    double ab_t = sched.alpha_bar[t], ab_p = sched.alpha_bar[t_prev];
    double c0 = std::sqrt(ab_p / ab_t);
    double c1 = std::sqrt(1.0 - ab_p) - c0 * std::sqrt(1.0 - ab_t);
    std::vector<double> v(x_t.size());
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = c0 * x_t.value()[i] + c1 * eps_hat.value()[i];
    return Tensor::from(x_t.shape(), std::move(v));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
    if (eps_cond.shape() != eps_uncond.shape())
        throw std::invalid_argument("cfg_combine: shapes differ");
    if (s == 1.0) return eps_cond;  // exact at the endpoints
    if (s == 0.0) return eps_uncond;
    return add(eps_uncond, scale(sub(eps_cond, eps_uncond), s));
}

Tensor sample(const SampleRequest& req, const ToyUNet& unet, const StreamProjections& proj,
              const DiffusionSchedule& sched) {
    NoGradGuard ng;
    RandomSource rng(req.seed);

    std::vector<size_t> ts = ddim_timesteps(sched, req.steps);
    Tensor x;
    if (req.has_content_prior) {
        auto [prior, t_P] = make_content_prior(req.content_latent, req.lambda_P, sched, req.seed);
        while (!ts.empty() && ts.front() > t_P) ts.erase(ts.begin());
        if (ts.empty()) return req.content_latent.detach();
        x = prior;
    } else {
        x = Tensor::randn({4, 32, 32}, rng, 1.0);
    }

    TokenSet ut{Tensor::zeros({1, unet.token_dim()}), TokenKind::Text};
    TokenSet us = req.uncond_drops_all_streams
                      ? TokenSet{Tensor::zeros(req.e_s.tokens.shape()), TokenKind::Style}
                      : req.e_s;
    TokenSet uc = req.uncond_drops_all_streams
                      ? TokenSet{Tensor::zeros(req.e_c.tokens.shape()), TokenKind::Color}
                      : req.e_c;

    for (size_t i = 0; i < ts.size(); ++i) {
        size_t t = ts[i], t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Tensor cond = unet.forward(x, t, req.e_t, req.e_s, req.e_c, proj, req.policy, req.cond);
        Tensor uncond = unet.forward(x, t, ut, us, uc, proj, req.policy, req.cond);
        Tensor eps = cfg_combine(cond, uncond, req.cfg_scale);
        if (req.clip_denoised) {
            // clamp the implied x_0 and fold the correction back into eps
            double ab = sched.alpha_bar[t];
            double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
            std::vector<double> e(eps.size());
            for (size_t k = 0; k < e.size(); ++k) {
                double x0 = (x.value()[k] - sb * eps.value()[k]) / sa;
                x0 = std::clamp(x0, -1.0, 1.0);
                e[k] = (x.value()[k] - sa * x0) / sb;
            }
            eps = Tensor::from(eps.shape(), std::move(e));
        }
        x = ddim_step(x, eps, t, t_prev, sched);
    }
    return x;
}

}  // namespace cdst
