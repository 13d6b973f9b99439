#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mindkit/adam.hpp"
#include "mindkit/backward.hpp"
#include "mindkit/tnsr.hpp"

namespace mindkit {

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

inline TensorBundle to_bundle(const NamedParams& params) {
    TensorBundle b;
    for (const auto& [name, t] : params) b[name] = *t;
    return b;
}

inline void from_bundle(const TensorBundle& b, const NamedParams& params) {
    for (const auto& [name, t] : params) *t = b.at(name);
}

// Watches every parameter on a tape; returned leaves parallel `params`.
inline std::vector<Tensor> watch_all(Tape& tape, const NamedParams& params) {
    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (const auto& [name, t] : params) leaves.push_back(tape.leaf(*t));
    return leaves;
}

inline void apply_adam(const NamedParams& params, const std::vector<Tensor>& leaves, const GradMap& grads,
                       AdamState& state) {
    std::vector<Tensor*> ptrs;
    ptrs.reserve(params.size());
    for (const auto& [name, t] : params) ptrs.push_back(t);
    adam_step(ptrs, leaves, grads, state);
}

// mean loss per epoch, in training order
struct TrainLog {
    std::vector<double> epoch_loss;
};

// draws a seeded permutation of [0, n)
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
    return idx;
}

// stacks selected rows of a (N x D) matrix into a (batch x D) tensor
inline Tensor gather_batch(const Tensor& all, const std::vector<int>& idx, int lo, int hi) {
    int d = static_cast<int>(all.numel()) / all.shape[0];
    std::vector<float> out(static_cast<size_t>(hi - lo) * d);
    for (int i = lo; i < hi; ++i)
        std::copy_n(all.data.data() + static_cast<size_t>(idx[static_cast<size_t>(i)]) * d, d,
                    out.data() + static_cast<size_t>(i - lo) * d);
    return Tensor({hi - lo, d}, std::move(out));
}

}  // namespace mindkit
