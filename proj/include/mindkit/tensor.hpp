#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mindkit/common.hpp"
#include "mindkit/rng.hpp"

namespace mindkit {

class Tape;

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major float32 value type. `tape`/`node` link the value into a
// recording when it participates in a differentiable computation; plain
// values have node == -1.
struct Tensor {
    Shape shape;
    std::vector<float> data;
    Tape* tape = nullptr;
    int node = -1;
    // Reductions record their 64-bit accumulator here so finite-difference
    // checks can read the loss above float32 resolution.
    double hi_value = std::numeric_limits<double>::quiet_NaN();

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape.empty()) throw ShapeMismatch("rank-0 tensor not supported");
        for (int e : shape)
            if (e <= 0) throw ShapeMismatch("non-positive extent in " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw ShapeMismatch("shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
    }

    static Tensor zeros(Shape s) {
        size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<float>(n, 0.0f));
    }
    static Tensor full(Shape s, float v) {
        size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<float>(n, v));
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor randn(Shape s, Rng& rng, float stddev = 1.0f) {
        size_t n = shape_numel(s);
        std::vector<float> d(n);
        for (auto& x : d) x = static_cast<float>(rng.gaussian()) * stddev;
        return Tensor(std::move(s), std::move(d));
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape[0]; }
    int cols() const { return shape.back(); }

    float& at(int i) { return data[static_cast<size_t>(i)]; }
    float at(int i) const { return data[static_cast<size_t>(i)]; }
    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    // scalar value at the best available precision
    double hi() const { return std::isnan(hi_value) ? static_cast<double>(data[0]) : hi_value; }

    bool finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_finite(const Tensor& t, const char* where) {
    if (strict_mode().load(std::memory_order_relaxed) && !t.finite())
        throw NonFinite(std::string("non-finite value at ") + where);
}

namespace detail {

// C (n x m) = A (n x k) * B (k x m)
inline void mm_nn(const float* a, const float* b, float* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        float* ci = c + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) ci[j] = 0.0f;
        const float* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float aip = ai[p];
            const float* bp = b + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C (n x m) = A (n x k) * B^T, B given as (m x k)
inline void mm_nt(const float* a, const float* b, float* c, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const float* bj = b + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

// C (n x m) = A^T * B, A given as (k x n), B as (k x m)
inline void mm_tn(const float* a, const float* b, float* c, int n, int k, int m) {
    for (size_t i = 0; i < static_cast<size_t>(n) * m; ++i) c[i] = 0.0f;
    for (int p = 0; p < k; ++p) {
        const float* ap = a + static_cast<size_t>(p) * n;
        const float* bp = b + static_cast<size_t>(p) * m;
        for (int i = 0; i < n; ++i) {
            const float api = ap[i];
            float* ci = c + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) ci[j] += api * bp[j];
        }
    }
}

}  // namespace detail

}  // namespace mindkit
