#pragma once

#include <vector>

#include "cdst/tensor.hpp"

namespace cdst {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled weight-decay Adam. Moment buffers are keyed by parameter order,
// which must stay stable across steps.
class AdamW {
 public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update from the parameters' accumulated gradients.
    // Throws on non-finite gradients. Does not clear gradients.
    void step(std::vector<Tensor>& params);

    void zero_grad(std::vector<Tensor>& params) {
        for (auto& p : params) p.zero_grad();
    }

    const AdamWConfig& config() const { return cfg_; }
    long step_count() const { return step_; }

 private:
    AdamWConfig cfg_;
    long step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace cdst
