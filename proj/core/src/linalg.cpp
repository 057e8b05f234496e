#include "nxl/linalg.hpp"

#include <cmath>

namespace nxl {

double l2_norm(const Vector& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double l1_norm(const Vector& v) {
    double acc = 0.0;
    for (double x : v) acc += std::fabs(x);
    return acc;
}

Vector softmax(const Vector& v) { return softmax_t(v); }

Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps) {
    if (v.size() != gain.size() || v.size() != bias.size()) {
        throw ShapeError("layer_norm: length mismatch");
    }
    return layer_norm_t(v, gain, bias, eps);
}

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul_t(a, b); }

} // namespace nxl
