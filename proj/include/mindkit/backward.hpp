#pragma once

#include <cmath>
#include <vector>

#include "mindkit/ops.hpp"

namespace mindkit {

// Gradients produced by one backward() call. A fresh map is computed per
// call, so repeated backward on the same tape is pure. Requesting a node the
// loss does not depend on yields a zero tensor.
struct GradMap {
    const Tape* tape = nullptr;
    std::vector<std::vector<float>> g;
    std::vector<char> present;

    bool has(const Tensor& t) const {
        return t.node >= 0 && t.tape == tape && present[static_cast<size_t>(t.node)];
    }

    Tensor of(const Tensor& t) const {
        if (t.node < 0 || t.tape != tape)
            throw MissingGradient("tensor is not recorded on the differentiated tape");
        if (!present[static_cast<size_t>(t.node)]) return Tensor::zeros(t.shape);
        return Tensor(t.shape, g[static_cast<size_t>(t.node)]);
    }
};

namespace detail {

inline std::vector<float>& grad_slot(GradMap& gm, const Tape& tape, int id) {
    auto& slot = gm.g[static_cast<size_t>(id)];
    if (!gm.present[static_cast<size_t>(id)]) {
        slot.assign(shape_numel(tape.nodes[static_cast<size_t>(id)].shape), 0.0f);
        gm.present[static_cast<size_t>(id)] = 1;
    }
    return slot;
}

inline bool wants_grad(const Tape& tape, int id) { return tape.nodes[static_cast<size_t>(id)].requires_grad; }

inline void backprop_node(const Tape& tape, int id, GradMap& gm) {
    const Node& n = tape.nodes[static_cast<size_t>(id)];
    const std::vector<float>& gy = gm.g[static_cast<size_t>(id)];
    auto input = [&](int k) -> const Node& { return tape.nodes[static_cast<size_t>(n.in[static_cast<size_t>(k)])]; };
    auto slot = [&](int k) -> std::vector<float>& { return grad_slot(gm, tape, n.in[static_cast<size_t>(k)]); };
    auto wants = [&](int k) { return wants_grad(tape, n.in[static_cast<size_t>(k)]); };

    switch (n.op) {
        case Op::Leaf:
            return;
        case Op::Matmul: {
            const Node& a = input(0);
            const Node& b = input(1);
            int nr = a.shape[0], k = a.shape[1], m = b.shape[1];
            if (wants(0)) {
                std::vector<float> da(a.value.size());
                mm_nt(gy.data(), b.value.data(), da.data(), nr, m, k);
                auto& s = slot(0);
                for (size_t i = 0; i < s.size(); ++i) s[i] += da[i];
            }
            if (wants(1)) {
                std::vector<float> db(b.value.size());
                mm_tn(a.value.data(), gy.data(), db.data(), k, nr, m);
                auto& s = slot(1);
                for (size_t i = 0; i < s.size(); ++i) s[i] += db[i];
            }
            return;
        }
        case Op::Bmm: {
            const Node& a = input(0);
            const Node& b = input(1);
            bool shared = b.shape.size() == 2;
            int B = a.shape[0], nr = a.shape[1], k = a.shape[2];
            int m = shared ? b.shape[1] : b.shape[2];
            if (wants(0)) {
                auto& s = slot(0);
                std::vector<float> da(static_cast<size_t>(nr) * k);
                for (int i = 0; i < B; ++i) {
                    mm_nt(gy.data() + static_cast<size_t>(i) * nr * m,
                          b.value.data() + (shared ? 0 : static_cast<size_t>(i) * k * m), da.data(), nr, m, k);
                    float* si = s.data() + static_cast<size_t>(i) * nr * k;
                    for (size_t j = 0; j < da.size(); ++j) si[j] += da[j];
                }
            }
            if (wants(1)) {
                auto& s = slot(1);
                std::vector<float> db(static_cast<size_t>(k) * m);
                for (int i = 0; i < B; ++i) {
                    mm_tn(a.value.data() + static_cast<size_t>(i) * nr * k,
                          gy.data() + static_cast<size_t>(i) * nr * m, db.data(), k, nr, m);
                    float* si = s.data() + (shared ? 0 : static_cast<size_t>(i) * k * m);
                    for (size_t j = 0; j < db.size(); ++j) si[j] += db[j];
                }
            }
            return;
        }
        case Op::Add:
        case Op::Sub: {
            float sign = n.op == Op::Sub ? -1.0f : 1.0f;
            if (wants(0)) {
                auto& s = slot(0);
                for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i];
            }
            if (wants(1)) {
                auto red = reduce_to(gy, n.shape, input(1).shape);
                auto& s = slot(1);
                for (size_t i = 0; i < s.size(); ++i) s[i] += sign * red[i];
            }
            return;
        }
        case Op::Mul: {
            const Node& a = input(0);
            const Node& b = input(1);
            Broadcast m = broadcast_mode(a.shape, b.shape);
            if (wants(0)) {
                auto& s = slot(0);
                if (m == Broadcast::Same)
                    for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i] * b.value[i];
                else if (m == Broadcast::Scalar)
                    for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i] * b.value[0];
                else {
                    size_t w = static_cast<size_t>(a.shape.back());
                    for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i] * b.value[i % w];
                }
            }
            if (wants(1)) {
                std::vector<float> prod(gy.size());
                for (size_t i = 0; i < prod.size(); ++i) prod[i] = gy[i] * a.value[i];
                auto red = reduce_to(prod, a.shape, b.shape);
                auto& s = slot(1);
                for (size_t i = 0; i < s.size(); ++i) s[i] += red[i];
            }
            return;
        }
        case Op::Scale: {
            if (!wants(0)) return;
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i] * n.attrs.scalar;
            return;
        }
        case Op::AddConst:
        case Op::Reshape: {
            if (!wants(0)) return;
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i];
            return;
        }
        case Op::Transpose: {
            if (!wants(0)) return;
            auto& s = slot(0);
            if (n.shape.size() == 2) {
                int m = n.shape[0], nr = n.shape[1];  // output is (m x nr); input was (nr x m)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < nr; ++j)
                        s[static_cast<size_t>(j) * m + i] += gy[static_cast<size_t>(i) * nr + j];
            } else {
                int B = n.shape[0], m = n.shape[1], nr = n.shape[2];
                for (int b = 0; b < B; ++b) {
                    const float* gb = gy.data() + static_cast<size_t>(b) * m * nr;
                    float* sb = s.data() + static_cast<size_t>(b) * m * nr;
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < nr; ++j)
                            sb[static_cast<size_t>(j) * m + i] += gb[static_cast<size_t>(i) * nr + j];
                }
            }
            return;
        }
        case Op::RowSlice: {
            if (!wants(0)) return;
            const Node& a = input(0);
            size_t stride = shape_numel(a.shape) / static_cast<size_t>(a.shape[0]);
            auto& s = slot(0);
            for (size_t i = 0; i < gy.size(); ++i) s[static_cast<size_t>(n.attrs.i0) * stride + i] += gy[i];
            return;
        }
        case Op::Concat: {
            size_t off = 0;
            for (size_t k = 0; k < n.in.size(); ++k) {
                const Node& a = input(static_cast<int>(k));
                size_t len = shape_numel(a.shape);
                if (wants(static_cast<int>(k))) {
                    auto& s = slot(static_cast<int>(k));
                    for (size_t i = 0; i < len; ++i) s[i] += gy[off + i];
                }
                off += len;
            }
            return;
        }
        case Op::Softmax: {
            if (!wants(0)) return;
            int cols = n.shape.back();
            int rows = static_cast<int>(n.value.size()) / cols;
            auto& s = slot(0);
            for (int r = 0; r < rows; ++r) {
                const float* y = n.value.data() + static_cast<size_t>(r) * cols;
                const float* gr = gy.data() + static_cast<size_t>(r) * cols;
                float* sr = s.data() + static_cast<size_t>(r) * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += static_cast<double>(gr[c]) * y[c];
                for (int c = 0; c < cols; ++c) sr[c] += static_cast<float>((gr[c] - dot) * y[c]);
            }
            return;
        }
        case Op::Silu: {
            if (!wants(0)) return;
            const Node& a = input(0);
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) {
                float x = a.value[i];
                float sig = 1.0f / (1.0f + std::exp(-x));
                s[i] += gy[i] * sig * (1.0f + x * (1.0f - sig));
            }
            return;
        }
        case Op::Tanh: {
            if (!wants(0)) return;
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) s[i] += gy[i] * (1.0f - n.value[i] * n.value[i]);
            return;
        }
        case Op::LayerNorm: {
            if (!wants(0)) return;
            const Node& a = input(0);
            int cols = n.shape.back();
            int rows = static_cast<int>(n.value.size()) / cols;
            auto& s = slot(0);
            for (int r = 0; r < rows; ++r) {
                const float* x = a.value.data() + static_cast<size_t>(r) * cols;
                const float* y = n.value.data() + static_cast<size_t>(r) * cols;
                const float* gr = gy.data() + static_cast<size_t>(r) * cols;
                float* sr = s.data() + static_cast<size_t>(r) * cols;
                double mu = 0.0;
                for (int c = 0; c < cols; ++c) mu += x[c];
                mu /= cols;
                double var = 0.0;
                for (int c = 0; c < cols; ++c) {
                    double d = x[c] - mu;
                    var += d * d;
                }
                var /= cols;
                double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                double mg = 0.0, mgy = 0.0;
                for (int c = 0; c < cols; ++c) {
                    mg += gr[c];
                    mgy += static_cast<double>(gr[c]) * y[c];
                }
                mg /= cols;
                mgy /= cols;
                for (int c = 0; c < cols; ++c) sr[c] += static_cast<float>((gr[c] - mg - y[c] * mgy) * inv);
            }
            return;
        }
        case Op::Mse: {
            const Node& a = input(0);
            const Node& b = input(1);
            float gl = gy[0];
            float c = 2.0f / static_cast<float>(a.value.size());
            if (wants(0)) {
                auto& s = slot(0);
                for (size_t i = 0; i < s.size(); ++i) s[i] += gl * c * (a.value[i] - b.value[i]);
            }
            if (wants(1)) {
                auto& s = slot(1);
                for (size_t i = 0; i < s.size(); ++i) s[i] -= gl * c * (a.value[i] - b.value[i]);
            }
            return;
        }
        case Op::Sum: {
            if (!wants(0)) return;
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) s[i] += gy[0];
            return;
        }
        case Op::L2Norm: {
            if (!wants(0)) return;
            const Node& a = input(0);
            float y = n.value[0];
            if (y == 0.0f) return;  // gradient defined as 0 at the origin
            auto& s = slot(0);
            for (size_t i = 0; i < s.size(); ++i) s[i] += gy[0] * a.value[i] / y;
            return;
        }
        case Op::CosineSim: {
            const Node& a = input(0);
            const Node& b = input(1);
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (size_t i = 0; i < a.value.size(); ++i) {
                dot += static_cast<double>(a.value[i]) * b.value[i];
                na += static_cast<double>(a.value[i]) * a.value[i];
                nb += static_cast<double>(b.value[i]) * b.value[i];
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            if (na == 0.0 || nb == 0.0) return;
            double c = dot / (na * nb);
            double gl = gy[0];
            if (wants(0)) {
                auto& s = slot(0);
                for (size_t i = 0; i < s.size(); ++i)
                    s[i] += static_cast<float>(gl * (b.value[i] / (na * nb) - c * a.value[i] / (na * na)));
            }
            if (wants(1)) {
                auto& s = slot(1);
                for (size_t i = 0; i < s.size(); ++i)
                    s[i] += static_cast<float>(gl * (a.value[i] / (na * nb) - c * b.value[i] / (nb * nb)));
            }
            return;
        }
        case Op::TakeRows: {
            if (!wants(0)) return;
            const Node& a = input(0);
            int cols = a.shape[1];
            auto& s = slot(0);
            for (size_t i = 0; i < n.attrs.ints.size(); ++i) {
                const float* gr = gy.data() + i * static_cast<size_t>(cols);
                float* sr = s.data() + static_cast<size_t>(n.attrs.ints[i]) * cols;
                for (int c = 0; c < cols; ++c) sr[c] += gr[c];
            }
            return;
        }
        case Op::L2Normalize: {
            if (!wants(0)) return;
            const Node& a = input(0);
            int cols = n.shape.back();
            int rows = static_cast<int>(n.value.size()) / cols;
            auto& s = slot(0);
            for (int r = 0; r < rows; ++r) {
                const float* x = a.value.data() + static_cast<size_t>(r) * cols;
                const float* y = n.value.data() + static_cast<size_t>(r) * cols;
                const float* gr = gy.data() + static_cast<size_t>(r) * cols;
                float* sr = s.data() + static_cast<size_t>(r) * cols;
                double nn = 0.0;
                for (int c = 0; c < cols; ++c) nn += static_cast<double>(x[c]) * x[c];
                if (nn == 0.0) continue;
                double inv = 1.0 / std::sqrt(nn);
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += static_cast<double>(gr[c]) * y[c];
                for (int c = 0; c < cols; ++c) sr[c] += static_cast<float>((gr[c] - y[c] * dot) * inv);
            }
            return;
        }
        case Op::SoftmaxXent: {
            if (!wants(0)) return;
            const Node& a = input(0);
            int rows = a.shape[0], cols = a.shape[1];
            std::vector<float> sm(a.value.size());
            softmax_rows(a.value.data(), sm.data(), rows, cols);
            float gl = gy[0] / static_cast<float>(rows);
            auto& s = slot(0);
            for (int r = 0; r < rows; ++r) {
                float* sr = s.data() + static_cast<size_t>(r) * cols;
                const float* smr = sm.data() + static_cast<size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) sr[c] += gl * smr[c];
                sr[n.attrs.ints[static_cast<size_t>(r)]] -= gl;
            }
            return;
        }
    }
}

}  // namespace detail

inline GradMap backward(const Tensor& loss) {
    if (loss.node < 0 || !loss.tape) throw NotScalarLoss("loss is not recorded on a tape");
    if (loss.numel() != 1) throw NotScalarLoss("loss must be scalar, got " + shape_str(loss.shape));
    const Tape& tape = *loss.tape;
    GradMap gm;
    gm.tape = &tape;
    gm.g.resize(tape.size());
    gm.present.assign(tape.size(), 0);
    gm.g[static_cast<size_t>(loss.node)] = {1.0f};
    gm.present[static_cast<size_t>(loss.node)] = 1;
    for (int id = loss.node; id >= 0; --id) {
        if (!gm.present[static_cast<size_t>(id)]) continue;
        if (!tape.nodes[static_cast<size_t>(id)].requires_grad) continue;
        detail::backprop_node(tape, id, gm);
    }
    return gm;
}

}  // namespace mindkit
