#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nxl/errors.hpp"

namespace nxl {

using Vector = std::vector<double>;

// Row-major dense matrix, templated so the same kernels run on plain doubles
// and on autodiff scalars.
template <class S>
struct MatT {
    int rows = 0;
    int cols = 0;
    std::vector<S> data;

    MatT() = default;
    MatT(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c) {}
    MatT(int r, int c, std::vector<S> d) : rows(r), cols(c), data(std::move(d)) {}

    S& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const S& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::vector<S> row(int r) const {
        return std::vector<S>(data.begin() + static_cast<std::size_t>(r) * cols,
                              data.begin() + static_cast<std::size_t>(r + 1) * cols);
    }
};

using Matrix = MatT<double>;

inline double value_of(double x) { return x; }

inline bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (double x : m.data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double l2_norm(const Vector& v);
double l1_norm(const Vector& v);
Vector softmax(const Vector& v);
Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps);
Matrix matmul(const Matrix& a, const Matrix& b);

// ---- templated kernels shared by the double and autodiff paths ----

// Numerically stable softmax; the max is located on primal values so the
// autodiff path records only the shifted exponentials.
template <class S>
std::vector<S> softmax_t(const std::vector<S>& v) {
    int arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (value_of(v[i]) > value_of(v[arg])) arg = static_cast<int>(i);
    }
    std::vector<S> out;
    out.reserve(v.size());
    S denom = v[0] - v[0]; // zero of the scalar type
    for (const S& x : v) {
        using std::exp;
        out.push_back(exp(x - v[arg]));
        denom = denom + out.back();
    }
    for (S& x : out) x = x / denom;
    return out;
}

// Population variance (divide by n), eps inside the square root.
template <class S>
std::vector<S> layer_norm_t(const std::vector<S>& v, const std::vector<S>& gain,
                            const std::vector<S>& bias, double eps) {
    const double n = static_cast<double>(v.size());
    S mean = v[0] - v[0];
    for (const S& x : v) mean = mean + x;
    mean = mean * (1.0 / n);
    S var = v[0] - v[0];
    for (const S& x : v) {
        S d = x - mean;
        var = var + d * d;
    }
    var = var * (1.0 / n);
    using std::sqrt;
    S denom = sqrt(var + eps);
    std::vector<S> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(gain[i] * ((v[i] - mean) / denom) + bias[i]);
    }
    return out;
}

// Exact GELU, 0.5 x (1 + erf(x / sqrt(2))).
template <class S>
S gelu_t(const S& x) {
    using std::erf;
    return (x * 0.5) * (erf(x * 0.7071067811865476) + 1.0);
}

// Fixed i-j-k loop order with ascending-k accumulation; summation order is
// part of the contract.
template <class S>
MatT<S> matmul_t(const MatT<S>& a, const MatT<S>& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    }
    MatT<S> c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            S acc = a.at(i, 0) * b.at(0, j);
            for (int k = 1; k < a.cols; ++k) {
                acc = acc + a.at(i, k) * b.at(k, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

template <class S>
S dot_t(const std::vector<S>& a, const std::vector<S>& b) {
    S acc = a[0] - a[0];
    for (std::size_t i = 0; i < a.size(); ++i) acc = acc + a[i] * b[i];
    return acc;
}

} // namespace nxl
