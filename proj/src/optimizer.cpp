#include "apt/optimizer.hpp"

#include <cmath>

#include "apt/error.hpp"

namespace apt {

double lr_at(long step, int d_model, int warmup_steps) {
    if (step < 1) throw InvalidInputError("lr_at: step must be >= 1");
    if (d_model < 1 || warmup_steps < 1)
        throw InvalidInputError("lr_at: d_model and warmup_steps must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamOptimizer::AdamOptimizer(ParamList params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.size(), 0.0);
        v_.emplace_back(p.tensor.size(), 0.0);
    }
}

AdamOptimizer::StepInfo AdamOptimizer::step() {
    StepInfo info;
    double sq = 0.0;
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue; // no grad accumulated: treated as zero
        for (double g : p.tensor.grad()) sq += g * g;
    }
    info.grad_norm = std::sqrt(sq);
    if (!std::isfinite(info.grad_norm)) {
        info.skipped = true;
        ++skipped_;
        return info;
    }
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0 && info.grad_norm > cfg_.grad_clip)
        scale = cfg_.grad_clip / info.grad_norm;

    ++t_;
    info.lr = cfg_.lr_scale * lr_at(t_, cfg_.d_model, cfg_.warmup_steps);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor t = params_[i].tensor;
        const bool has = t.has_grad();
        auto& vals = t.leaf_values();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double g = has ? t.grad()[j] * scale : 0.0;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            vals[j] -= info.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        t.enforce_dtype();
    }
    return info;
}

} // namespace apt
