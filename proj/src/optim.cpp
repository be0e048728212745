#include "cdst/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cdst {

void AdamW::step(std::vector<Tensor>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].size(), 0.0);
            v_[i].assign(params[i].size(), 0.0);
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("AdamW::step: parameter count changed");

    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].value();
        auto& g = params[i].grad();
        if (g.size() != p.size() || m_[i].size() != p.size())
            throw std::invalid_argument("AdamW::step: parameter shape changed");
        for (size_t j = 0; j < p.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw std::runtime_error("AdamW::step: non-finite gradient");
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
        }
    }
}

}  // namespace cdst
