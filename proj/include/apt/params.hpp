#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "apt/rng.hpp"
#include "apt/tensor.hpp"

namespace apt {

// A trainable leaf tensor with a stable dotted name; the name order defines
// checkpoint manifest order, optimizer state keys, and finetune copy targets.
struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

inline void append_params(ParamList& out, const std::string& prefix, const ParamList& sub) {
    for (const auto& p : sub) out.push_back({prefix + "." + p.name, p.tensor});
}

inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_values({fan_in, fan_out}, std::move(v), true);
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from_values(std::move(shape), std::move(v), true);
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor ones_param(Shape shape) { return Tensor::constant(std::move(shape), 1.0, true); }

// Tensor is a shared handle, so clearing through a copy clears the node.
inline void zero_grads(const ParamList& params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.clear_grad();
    }
}

inline std::size_t total_param_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

} // namespace apt
