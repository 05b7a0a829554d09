// Self-contained deterministic RNG. The whole artifact draws randomness
// through this engine so that every documented stream is reproducible
// bit-for-bit from a 64-bit seed, independent of platform or standard library.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "fedgrem/types.hpp"

namespace fedgrem {

// splitmix64 output mixer (shift-xor-multiply; shifts 30/27/31).
inline std::uint64_t splitmix64_finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// Deterministic stream derivation:
//   finalize(master XOR (task_index+1)*0x9E3779B97F4A7C15
//                   XOR (stream+1)*0xBF58476D1CE4E5B9)
// Documented bit-exactly in the README so any language can reproduce it.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t task_index,
                                 std::uint64_t stream) {
    const std::uint64_t mixed = master ^ ((task_index + 1) * 0x9E3779B97F4A7C15ULL) ^
                                ((stream + 1) * 0xBF58476D1CE4E5B9ULL);
    return splitmix64_finalize(mixed);
}

// Stream indices used with derive_seed across the pipeline.
enum Stream : std::uint64_t {
    kStreamCenters = 0,
    kStreamWeights = 1,
    kStreamData = 2,
    kStreamContamination = 3,
    kStreamInit = 4,
    kStreamRepeat = 5,
};

// splitmix64 sequence generator.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix64_finalize(state_);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe as a logarithm argument.
    double uniform01_open() {
        return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    // Standard normal via Box-Muller (cosine branch; one draw per call so the
    // stream position is a pure function of the call count).
    double normal() {
        const double u = uniform01_open();
        const double v = uniform01();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
    }

    // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha < 1 boosted through
    // Gamma(alpha + 1) * U^(1/alpha).
    double gamma(double alpha) {
        if (!(alpha > 0.0)) throw ContractError("gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double g = gamma(alpha + 1.0);
            return g * std::pow(uniform01_open(), 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            const double v = t * t * t;
            const double u = uniform01_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Dirichlet(alpha, ..., alpha) on the R-simplex.
    Vec dirichlet(std::size_t R, double alpha) {
        Vec out(R);
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            out[r] = gamma(alpha);
            sum += out[r];
        }
        for (double& v : out) v /= sum;
        return out;
    }

    // Uniform draw from the closed d-ball of the given radius.
    Vec ball_uniform(std::size_t d, double radius) {
        Vec v = sphere_uniform(d, radius);
        const double scale = std::pow(uniform01_open(), 1.0 / static_cast<double>(d));
        for (double& x : v) x *= scale;
        return v;
    }

    // Uniform draw from the (d-1)-sphere of the given radius.
    Vec sphere_uniform(std::size_t d, double radius) {
        Vec v(d);
        double nrm = 0.0;
        do {
            nrm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                v[j] = normal();
                nrm += v[j] * v[j];
            }
        } while (nrm == 0.0);
        const double scale = radius / std::sqrt(nrm);
        for (double& x : v) x *= scale;
        return v;
    }

    // Index draw from a simplex weight vector by CDF scan.
    std::size_t categorical(const Vec& weights) {
        const double u = uniform01();
        double acc = 0.0;
        for (std::size_t r = 0; r + 1 < weights.size(); ++r) {
            acc += weights[r];
            if (u < acc) return r;
        }
        return weights.size() - 1;
    }

private:
    std::uint64_t state_;
};

}  // namespace fedgrem
