#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mindkit/backward.hpp"

namespace mindkit {

struct AdamState {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    long step = 0;
    std::vector<std::vector<float>> m;  // first moments, one per parameter
    std::vector<std::vector<float>> v;  // second moments

    explicit AdamState(float lr_ = 1e-3f) : lr(lr_) {}
};

// Standard bias-corrected Adam. `params` are the persistent parameter values;
// `leaves` are their watched counterparts on the step's tape.
inline void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& leaves, const GradMap& grads,
                      AdamState& state) {
    if (params.size() != leaves.size()) throw MissingGradient("params/leaves size mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->numel(), 0.0f);
            state.v[i].assign(params[i]->numel(), 0.0f);
        }
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& leaf = leaves[i];
        if (leaf.node < 0) throw MissingGradient("parameter " + std::to_string(i) + " is not on the tape");
        Tensor g = grads.of(leaf);
        if (g.shape != params[i]->shape)
            throw MissingGradient("gradient shape mismatch for parameter " + std::to_string(i));
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& p = params[i]->data;
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g.data[j];
            v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g.data[j] * g.data[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            p[j] -= static_cast<float>(state.lr * mh / (std::sqrt(vh) + state.eps));
        }
    }
}

}  // namespace mindkit
