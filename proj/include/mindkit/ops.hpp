#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "mindkit/tensor.hpp"

namespace mindkit {

enum class Op {
    Leaf,
    Matmul,
    Bmm,
    Add,
    Sub,
    Mul,
    Scale,
    AddConst,
    Reshape,
    Transpose,
    RowSlice,
    Concat,
    Softmax,
    Silu,
    Tanh,
    LayerNorm,
    Mse,
    Sum,
    L2Norm,
    CosineSim,
    TakeRows,
    L2Normalize,
    SoftmaxXent,
};

struct NodeAttrs {
    float scalar = 0.0f;
    int i0 = 0;
    int i1 = 0;
    std::vector<int> ints;
};

struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    bool requires_grad = false;
    Shape shape;
    std::vector<float> value;
    NodeAttrs attrs;
};

// Define-by-run record of a computation. Node order is the forward execution
// order, which is a topological order by construction; backward walks it once
// in reverse. A Tape is single-threaded.
class Tape {
public:
    std::vector<Node> nodes;

    Tensor leaf(const Tensor& t, bool requires_grad = true) {
        check_finite(t, "leaf");
        Node n;
        n.op = Op::Leaf;
        n.requires_grad = requires_grad;
        n.shape = t.shape;
        n.value = t.data;
        int id = static_cast<int>(nodes.size());
        nodes.push_back(std::move(n));
        Tensor out = t;
        out.tape = this;
        out.node = id;
        return out;
    }

    Tensor constant(const Tensor& t) { return leaf(t, false); }

    int add(Node n) {
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    size_t size() const { return nodes.size(); }
};

namespace detail {

inline Tape* resolve_tape(std::initializer_list<const Tensor*> ins) {
    Tape* t = nullptr;
    for (const Tensor* x : ins) {
        if (x->node < 0) continue;
        if (t && x->tape != t) throw Error("operands recorded on different tapes");
        t = x->tape;
    }
    return t;
}

inline int on_tape(Tape& tape, const Tensor& x) {
    if (x.node >= 0) {
        if (x.tape != &tape) throw Error("operand recorded on a different tape");
        return x.node;
    }
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = false;
    n.shape = x.shape;
    n.value = x.data;
    return tape.add(std::move(n));
}

// Records a node when any input is taped; returns the finished tensor.
inline Tensor finish(Op op, std::initializer_list<const Tensor*> ins, Shape shape,
                     std::vector<float> value, NodeAttrs attrs = {}) {
    Tensor out(std::move(shape), std::move(value));
    check_finite(out, "op output");
    Tape* tape = resolve_tape(ins);
    if (!tape) return out;
    Node n;
    n.op = op;
    n.attrs = std::move(attrs);
    n.shape = out.shape;
    n.value = out.data;
    bool rg = false;
    for (const Tensor* x : ins) {
        int id = on_tape(*tape, *x);
        n.in.push_back(id);
        rg = rg || tape->nodes[id].requires_grad;
    }
    n.requires_grad = rg;
    out.tape = tape;
    out.node = tape->add(std::move(n));
    return out;
}

enum class Broadcast { Same, Scalar, RowVec };

inline Broadcast broadcast_mode(const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::Same;
    if (shape_numel(b) == 1) return Broadcast::Scalar;
    if (b.size() == 1 && b[0] == a.back()) return Broadcast::RowVec;
    throw ShapeMismatch("cannot broadcast " + shape_str(b) + " onto " + shape_str(a) +
                        " (only trailing scalar / row-vector broadcasting is supported)");
}

template <typename F>
inline std::vector<float> zip_broadcast(const Tensor& a, const Tensor& b, F f) {
    Broadcast m = broadcast_mode(a.shape, b.shape);
    std::vector<float> out(a.numel());
    if (m == Broadcast::Same) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data[i], b.data[i]);
    } else if (m == Broadcast::Scalar) {
        float s = b.data[0];
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data[i], s);
    } else {
        size_t w = static_cast<size_t>(a.cols());
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data[i], b.data[i % w]);
    }
    return out;
}

// reduce rhs-shaped gradient from an lhs-shaped one
inline std::vector<float> reduce_to(const std::vector<float>& g, const Shape& lhs, const Shape& rhs) {
    Broadcast m = broadcast_mode(lhs, rhs);
    if (m == Broadcast::Same) return g;
    if (m == Broadcast::Scalar) {
        double acc = 0.0;
        for (float v : g) acc += v;
        return {static_cast<float>(acc)};
    }
    size_t w = static_cast<size_t>(lhs.back());
    std::vector<double> acc(w, 0.0);
    for (size_t i = 0; i < g.size(); ++i) acc[i % w] += g[i];
    std::vector<float> out(w);
    for (size_t i = 0; i < w; ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

inline void require_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2) throw ShapeMismatch(std::string(who) + " expects rank-2, got " + shape_str(t.shape));
}

inline double row_max(const float* x, int n) {
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, static_cast<double>(x[i]));
    return m;
}

inline void softmax_rows(const float* x, float* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<size_t>(r) * cols;
        float* yr = y + static_cast<size_t>(r) * cols;
        double m = row_max(xr, cols);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            double e = std::exp(static_cast<double>(xr[c]) - m);
            yr[c] = static_cast<float>(e);
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] = static_cast<float>(yr[c] * inv);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul lhs");
    detail::require_rank2(b, "matmul rhs");
    check_finite(a, "matmul lhs");
    check_finite(b, "matmul rhs");
    if (a.shape[1] != b.shape[0])
        throw ShapeMismatch("matmul inner dims differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    int n = a.shape[0], k = a.shape[1], m = b.shape[1];
    std::vector<float> out(static_cast<size_t>(n) * m);
    detail::mm_nn(a.data.data(), b.data.data(), out.data(), n, k, m);
    return detail::finish(Op::Matmul, {&a, &b}, {n, m}, std::move(out));
}

// (B x n x k) * (B x k x m) or shared rhs (k x m)
inline Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3) throw ShapeMismatch("bmm lhs expects rank-3, got " + shape_str(a.shape));
    if (b.rank() != 3 && b.rank() != 2)
        throw ShapeMismatch("bmm rhs expects rank-3 or rank-2, got " + shape_str(b.shape));
    check_finite(a, "bmm lhs");
    check_finite(b, "bmm rhs");
    bool shared = b.rank() == 2;
    int B = a.shape[0], n = a.shape[1], k = a.shape[2];
    int kb = shared ? b.shape[0] : b.shape[1];
    int m = shared ? b.shape[1] : b.shape[2];
    if (kb != k || (!shared && b.shape[0] != B))
        throw ShapeMismatch("bmm shapes incompatible: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    std::vector<float> out(static_cast<size_t>(B) * n * m);
    for (int i = 0; i < B; ++i)
        detail::mm_nn(a.data.data() + static_cast<size_t>(i) * n * k,
                      b.data.data() + (shared ? 0 : static_cast<size_t>(i) * k * m),
                      out.data() + static_cast<size_t>(i) * n * m, n, k, m);
    return detail::finish(Op::Bmm, {&a, &b}, {B, n, m}, std::move(out));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_finite(a, "add lhs");
    check_finite(b, "add rhs");
    auto out = detail::zip_broadcast(a, b, [](float x, float y) { return x + y; });
    return detail::finish(Op::Add, {&a, &b}, a.shape, std::move(out));
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
    check_finite(a, "sub lhs");
    check_finite(b, "sub rhs");
    auto out = detail::zip_broadcast(a, b, [](float x, float y) { return x - y; });
    return detail::finish(Op::Sub, {&a, &b}, a.shape, std::move(out));
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    check_finite(a, "mul lhs");
    check_finite(b, "mul rhs");
    auto out = detail::zip_broadcast(a, b, [](float x, float y) { return x * y; });
    return detail::finish(Op::Mul, {&a, &b}, a.shape, std::move(out));
}

inline Tensor scale(const Tensor& a, float k) {
    check_finite(a, "scale");
    std::vector<float> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * k;
    NodeAttrs attrs;
    attrs.scalar = k;
    Tensor r = detail::finish(Op::Scale, {&a}, a.shape, std::move(out), std::move(attrs));
    if (!std::isnan(a.hi_value)) r.hi_value = a.hi_value * k;
    return r;
}

inline Tensor add_const(const Tensor& a, float k) {
    check_finite(a, "add_const");
    std::vector<float> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] + k;
    NodeAttrs attrs;
    attrs.scalar = k;
    Tensor r = detail::finish(Op::AddConst, {&a}, a.shape, std::move(out), std::move(attrs));
    if (!std::isnan(a.hi_value)) r.hi_value = a.hi_value + k;
    return r;
}

inline Tensor reshape(const Tensor& a, Shape s) {
    if (shape_numel(s) != a.numel())
        throw ShapeMismatch("reshape " + shape_str(a.shape) + " -> " + shape_str(s) + " changes element count");
    return detail::finish(Op::Reshape, {&a}, std::move(s), a.data);
}

// rank-2: plain transpose; rank-3: transpose of the last two axes per batch
inline Tensor transpose(const Tensor& a) {
    check_finite(a, "transpose");
    if (a.rank() == 2) {
        int n = a.shape[0], m = a.shape[1];
        std::vector<float> out(a.numel());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) out[static_cast<size_t>(j) * n + i] = a.at(i, j);
        return detail::finish(Op::Transpose, {&a}, {m, n}, std::move(out));
    }
    if (a.rank() == 3) {
        int B = a.shape[0], n = a.shape[1], m = a.shape[2];
        std::vector<float> out(a.numel());
        for (int b = 0; b < B; ++b) {
            const float* src = a.data.data() + static_cast<size_t>(b) * n * m;
            float* dst = out.data() + static_cast<size_t>(b) * n * m;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) dst[static_cast<size_t>(j) * n + i] = src[static_cast<size_t>(i) * m + j];
        }
        return detail::finish(Op::Transpose, {&a}, {B, m, n}, std::move(out));
    }
    throw ShapeMismatch("transpose expects rank-2 or rank-3, got " + shape_str(a.shape));
}

// slice rows [i0, i1) along the first axis
inline Tensor row_slice(const Tensor& a, int i0, int i1) {
    if (i0 < 0 || i1 > a.shape[0] || i0 >= i1)
        throw ShapeMismatch("row_slice [" + std::to_string(i0) + "," + std::to_string(i1) + ") out of " +
                            shape_str(a.shape));
    size_t stride = a.numel() / static_cast<size_t>(a.shape[0]);
    Shape s = a.shape;
    s[0] = i1 - i0;
    std::vector<float> out(a.data.begin() + static_cast<long>(i0 * stride),
                           a.data.begin() + static_cast<long>(i1 * stride));
    NodeAttrs attrs;
    attrs.i0 = i0;
    attrs.i1 = i1;
    return detail::finish(Op::RowSlice, {&a}, std::move(s), std::move(out), std::move(attrs));
}

// concatenate along the first axis
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
    Shape s = parts[0].shape;
    int rows = 0;
    std::vector<float> out;
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) {
        check_finite(p, "concat");
        Shape tail_a(s.begin() + 1, s.end());
        Shape tail_b(p.shape.begin() + 1, p.shape.end());
        if (p.shape.size() != s.size() || tail_a != tail_b)
            throw ShapeMismatch("concat trailing dims differ: " + shape_str(s) + " vs " + shape_str(p.shape));
        rows += p.shape[0];
        out.insert(out.end(), p.data.begin(), p.data.end());
        ptrs.push_back(&p);
    }
    s[0] = rows;
    Tensor result(std::move(s), std::move(out));
    Tape* tape = nullptr;
    for (const Tensor* p : ptrs)
        if (p->node >= 0) {
            if (tape && p->tape != tape) throw Error("operands recorded on different tapes");
            tape = p->tape;
        }
    if (!tape) return result;
    Node n;
    n.op = Op::Concat;
    n.shape = result.shape;
    n.value = result.data;
    for (const Tensor* p : ptrs) {
        int id = detail::on_tape(*tape, *p);
        n.in.push_back(id);
        n.requires_grad = n.requires_grad || tape->nodes[id].requires_grad;
    }
    result.tape = tape;
    result.node = tape->add(std::move(n));
    return result;
}

inline Tensor softmax(const Tensor& a) {
    check_finite(a, "softmax");
    int cols = a.cols();
    int rows = static_cast<int>(a.numel()) / cols;
    std::vector<float> out(a.numel());
    detail::softmax_rows(a.data.data(), out.data(), rows, cols);
    return detail::finish(Op::Softmax, {&a}, a.shape, std::move(out));
}

inline Tensor silu(const Tensor& a) {
    check_finite(a, "silu");
    std::vector<float> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        float x = a.data[i];
        out[i] = x / (1.0f + std::exp(-x));
    }
    return detail::finish(Op::Silu, {&a}, a.shape, std::move(out));
}

inline Tensor tanh_op(const Tensor& a) {
    check_finite(a, "tanh");
    std::vector<float> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data[i]);
    return detail::finish(Op::Tanh, {&a}, a.shape, std::move(out));
}

constexpr float kLayerNormEps = 1e-5f;

// normalize over the last axis; affine parameters are composed from mul/add
inline Tensor layer_norm(const Tensor& a) {
    check_finite(a, "layer_norm");
    int cols = a.cols();
    int rows = static_cast<int>(a.numel()) / cols;
    std::vector<float> out(a.numel());
    for (int r = 0; r < rows; ++r) {
        const float* x = a.data.data() + static_cast<size_t>(r) * cols;
        float* y = out.data() + static_cast<size_t>(r) * cols;
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
        for (int c = 0; c < cols; ++c) y[c] = static_cast<float>((x[c] - mu) * inv);
    }
    return detail::finish(Op::LayerNorm, {&a}, a.shape, std::move(out));
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw ShapeMismatch("mse shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    check_finite(a, "mse lhs");
    check_finite(b, "mse rhs");
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    acc /= static_cast<double>(a.numel());
    Tensor out = detail::finish(Op::Mse, {&a, &b}, {1}, {static_cast<float>(acc)});
    out.hi_value = acc;
    return out;
}

inline Tensor sum(const Tensor& a) {
    check_finite(a, "sum");
    double acc = 0.0;
    for (float v : a.data) acc += v;
    Tensor out = detail::finish(Op::Sum, {&a}, {1}, {static_cast<float>(acc)});
    out.hi_value = acc;
    return out;
}

inline Tensor l2_norm(const Tensor& a) {
    check_finite(a, "l2_norm");
    double acc = 0.0;
    for (float v : a.data) acc += static_cast<double>(v) * v;
    Tensor out = detail::finish(Op::L2Norm, {&a}, {1}, {static_cast<float>(std::sqrt(acc))});
    out.hi_value = std::sqrt(acc);
    return out;
}

inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw ShapeMismatch("cosine shapes differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    check_finite(a, "cosine lhs");
    check_finite(b, "cosine rhs");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += static_cast<double>(a.data[i]) * b.data[i];
        na += static_cast<double>(a.data[i]) * a.data[i];
        nb += static_cast<double>(b.data[i]) * b.data[i];
    }
    double denom = std::sqrt(na) * std::sqrt(nb);
    double c = denom > 0.0 ? dot / denom : 0.0;
    Tensor out = detail::finish(Op::CosineSim, {&a, &b}, {1}, {static_cast<float>(c)});
    out.hi_value = c;
    return out;
}

// gather rows of a rank-2 table; indices may repeat (grad scatter-adds)
inline Tensor take_rows(const Tensor& table, const std::vector<int>& idx) {
    detail::require_rank2(table, "take_rows");
    check_finite(table, "take_rows");
    int cols = table.shape[1];
    std::vector<float> out(idx.size() * static_cast<size_t>(cols));
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= table.shape[0])
            throw ShapeMismatch("take_rows index " + std::to_string(idx[i]) + " out of " + shape_str(table.shape));
        std::copy_n(table.data.data() + static_cast<size_t>(idx[i]) * cols, cols,
                    out.data() + i * static_cast<size_t>(cols));
    }
    NodeAttrs attrs;
    attrs.ints = idx;
    return detail::finish(Op::TakeRows, {&table}, {static_cast<int>(idx.size()), cols}, std::move(out),
                          std::move(attrs));
}

// unit-normalize over the last axis; zero rows stay zero
inline Tensor l2_normalize(const Tensor& a) {
    check_finite(a, "l2_normalize");
    int cols = a.cols();
    int rows = static_cast<int>(a.numel()) / cols;
    std::vector<float> out(a.numel());
    for (int r = 0; r < rows; ++r) {
        const float* x = a.data.data() + static_cast<size_t>(r) * cols;
        float* y = out.data() + static_cast<size_t>(r) * cols;
        double nn = 0.0;
        for (int c = 0; c < cols; ++c) nn += static_cast<double>(x[c]) * x[c];
        double inv = nn > 0.0 ? 1.0 / std::sqrt(nn) : 0.0;
        for (int c = 0; c < cols; ++c) y[c] = static_cast<float>(x[c] * inv);
    }
    return detail::finish(Op::L2Normalize, {&a}, a.shape, std::move(out));
}

// mean over rows of -log softmax(logits)[row, target]
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    detail::require_rank2(logits, "softmax_cross_entropy");
    check_finite(logits, "softmax_cross_entropy");
    int rows = logits.shape[0], cols = logits.shape[1];
    if (static_cast<int>(targets.size()) != rows)
        throw ShapeMismatch("one target per row required");
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        const float* x = logits.data.data() + static_cast<size_t>(r) * cols;
        if (targets[r] < 0 || targets[r] >= cols) throw ShapeMismatch("target out of range");
        double m = detail::row_max(x, cols);
        double lse = 0.0;
        for (int c = 0; c < cols; ++c) lse += std::exp(static_cast<double>(x[c]) - m);
        acc += m + std::log(lse) - x[targets[r]];
    }
    acc /= rows;
    NodeAttrs attrs;
    attrs.ints = targets;
    Tensor out = detail::finish(Op::SoftmaxXent, {&logits}, {1}, {static_cast<float>(acc)}, std::move(attrs));
    out.hi_value = acc;
    return out;
}

}  // namespace mindkit
