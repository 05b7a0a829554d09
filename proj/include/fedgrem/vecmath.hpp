// Small dense-vector kernels. All reductions run in fixed index order so that
// results are bit-reproducible regardless of threading or call site.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedgrem/types.hpp"

namespace fedgrem {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_sq(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

inline double dist_sq(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

inline double dist(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(dist_sq(a, b));
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline Vec add(std::span<const double> a, std::span<const double> b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Vec sub(std::span<const double> a, std::span<const double> b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Vec scaled(double a, std::span<const double> x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
    return out;
}

// Arithmetic mean over a nonempty list of equal-length vectors, k-major order.
inline Vec mean_of(const std::vector<Vec>& vs) {
    Vec out(vs.front().size(), 0.0);
    for (const Vec& v : vs)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& o : out) o *= inv;
    return out;
}

}  // namespace fedgrem
