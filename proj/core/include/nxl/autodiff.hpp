#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "nxl/linalg.hpp"

namespace nxl {

// Minimal reverse-mode tape. Every recorded node has at most two parents;
// local partials are stored at record time so the backward sweep is a single
// reverse pass over the node array.
class Tape {
public:
    struct Node {
        std::int32_t parent[2];
        double partial[2];
    };

    int leaf(double value) {
        nodes_.push_back(Node{{-1, -1}, {0.0, 0.0}});
        values_.push_back(value);
        return static_cast<int>(nodes_.size()) - 1;
    }

    int unary(int p, double partial, double value) {
        nodes_.push_back(Node{{static_cast<std::int32_t>(p), -1}, {partial, 0.0}});
        values_.push_back(value);
        return static_cast<int>(nodes_.size()) - 1;
    }

    int binary(int p0, int p1, double partial0, double partial1, double value) {
        nodes_.push_back(Node{{static_cast<std::int32_t>(p0), static_cast<std::int32_t>(p1)},
                              {partial0, partial1}});
        values_.push_back(value);
        return static_cast<int>(nodes_.size()) - 1;
    }

    double value(int i) const { return values_[i]; }
    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        values_.clear();
    }

    // Adjoints of every node with respect to the node `root`.
    std::vector<double> backward(int root) const {
        std::vector<double> adj(nodes_.size(), 0.0);
        adj[root] = 1.0;
        for (int i = root; i >= 0; --i) {
            const double a = adj[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.parent[0] >= 0) adj[n.parent[0]] += n.partial[0] * a;
            if (n.parent[1] >= 0) adj[n.parent[1]] += n.partial[1] * a;
        }
        return adj;
    }

private:
    std::vector<Node> nodes_;
    std::vector<double> values_;
};

// Scalar handle onto a Tape; value cached for cheap primal reads.
struct Ad {
    Tape* tape = nullptr;
    int idx = -1;
    double val = 0.0;
};

inline Ad make_ad(Tape& t, double v) { return Ad{&t, t.leaf(v), v}; }

inline double value_of(const Ad& x) { return x.val; }

inline Ad operator+(const Ad& a, const Ad& b) {
    return Ad{a.tape, a.tape->binary(a.idx, b.idx, 1.0, 1.0, a.val + b.val), a.val + b.val};
}
inline Ad operator-(const Ad& a, const Ad& b) {
    return Ad{a.tape, a.tape->binary(a.idx, b.idx, 1.0, -1.0, a.val - b.val), a.val - b.val};
}
inline Ad operator*(const Ad& a, const Ad& b) {
    return Ad{a.tape, a.tape->binary(a.idx, b.idx, b.val, a.val, a.val * b.val), a.val * b.val};
}
inline Ad operator/(const Ad& a, const Ad& b) {
    const double v = a.val / b.val;
    return Ad{a.tape, a.tape->binary(a.idx, b.idx, 1.0 / b.val, -v / b.val, v), v};
}
inline Ad operator-(const Ad& a) {
    return Ad{a.tape, a.tape->unary(a.idx, -1.0, -a.val), -a.val};
}

inline Ad operator+(const Ad& a, double c) {
    return Ad{a.tape, a.tape->unary(a.idx, 1.0, a.val + c), a.val + c};
}
inline Ad operator+(double c, const Ad& a) { return a + c; }
inline Ad operator-(const Ad& a, double c) { return a + (-c); }
inline Ad operator-(double c, const Ad& a) {
    return Ad{a.tape, a.tape->unary(a.idx, -1.0, c - a.val), c - a.val};
}
inline Ad operator*(const Ad& a, double c) {
    return Ad{a.tape, a.tape->unary(a.idx, c, a.val * c), a.val * c};
}
inline Ad operator*(double c, const Ad& a) { return a * c; }
inline Ad operator/(const Ad& a, double c) { return a * (1.0 / c); }
inline Ad operator/(double c, const Ad& a) {
    const double v = c / a.val;
    return Ad{a.tape, a.tape->unary(a.idx, -v / a.val, v), v};
}

inline Ad exp(const Ad& a) {
    const double v = std::exp(a.val);
    return Ad{a.tape, a.tape->unary(a.idx, v, v), v};
}
inline Ad log(const Ad& a) {
    const double v = std::log(a.val);
    return Ad{a.tape, a.tape->unary(a.idx, 1.0 / a.val, v), v};
}
inline Ad sqrt(const Ad& a) {
    const double v = std::sqrt(a.val);
    return Ad{a.tape, a.tape->unary(a.idx, 0.5 / v, v), v};
}
inline Ad erf(const Ad& a) {
    const double v = std::erf(a.val);
    const double d = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-a.val * a.val);
    return Ad{a.tape, a.tape->unary(a.idx, d, v), v};
}

using AdMatrix = MatT<Ad>;

inline AdMatrix lift(Tape& tape, const Matrix& m) {
    AdMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = make_ad(tape, m.data[i]);
    return out;
}

inline std::vector<Ad> lift(Tape& tape, const Vector& v) {
    std::vector<Ad> out;
    out.reserve(v.size());
    for (double x : v) out.push_back(make_ad(tape, x));
    return out;
}

} // namespace nxl
