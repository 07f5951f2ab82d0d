#pragma once

#include <cstdint>
#include <vector>

#include "apt/params.hpp"

namespace apt {

// Inverse-sqrt schedule with linear warmup:
// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5). Throws on step < 1.
double lr_at(long step, int d_model, int warmup_steps);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double lr_scale = 1.0;
    int warmup_steps = 400;
    int d_model = 64;
    double grad_clip = 5.0; // global norm; <= 0 disables
};

// Adam over a fixed parameter list. Gradients are read from the parameters'
// accumulated grad buffers; a non-finite global gradient norm skips the whole
// step (moments and the step counter untouched). Clipping rescales the
// effective gradient, not the stored buffers.
class AdamOptimizer {
public:
    AdamOptimizer(ParamList params, AdamConfig cfg);

    struct StepInfo {
        double lr = 0.0;
        double grad_norm = 0.0;
        bool skipped = false;
    };

    StepInfo step();

    long step_count() const { return t_; }
    std::size_t skipped_steps() const { return skipped_; }
    const ParamList& params() const { return params_; }

private:
    ParamList params_;
    AdamConfig cfg_;
    long t_ = 0;
    std::size_t skipped_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace apt
