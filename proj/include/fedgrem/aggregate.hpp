// Central update: jointly shrink K per-task iterates toward a learned center,
//   argmin over {nu_k}, nu_bar of sum_k [ (n/2)||nu_k - tilde_k||^2
//                                         + sqrt(n) * lambda * ||nu_k - nu_bar|| ]
// plus the decaying-with-floor penalty schedule that drives it across rounds.
//
// Solution method: profile out nu_k. For fixed nu_bar the optimal nu_k is the
// block soft-threshold nu_k = nu_bar + max(0, 1 - tau/t_k)(tilde_k - nu_bar)
// with t_k = ||tilde_k - nu_bar|| and tau = lambda/sqrt(n). The profiled
// objective F(nu_bar) = n * sum_k huber_tau(t_k) is convex and C1 with
//   grad F(nu_bar) = n * sum_k min(1, tau/t_k)(nu_bar - tilde_k),
// minimized by gradient descent with Armijo backtracking, then nu_k is
// reconstructed. Exact fast paths (lambda = 0, K = 1, full collapse when
// lambda >= sqrt(n) * max_k||tilde_k - mean||) bypass the solver entirely so
// the federation mode lattice is bit-exact.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

// Theory preset for the initial penalty scale (documentation only; the run-time
// schedule below is the computable surrogate).
inline constexpr double kCentralLambda0TheoryCoeff = 15.0 / 119.0;

struct AggregateResult {
    std::vector<Vec> per_task;  // nu_k, each on the segment [center, tilde_k]
    Vec center;                 // nu_bar
    double objective = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

inline double huber(double t, double tau) {
    return t <= tau ? 0.5 * t * t : tau * (t - 0.5 * tau);
}

inline double profiled_objective(const std::vector<Vec>& tilde, const Vec& center,
                                 double n, double tau) {
    double acc = 0.0;
    for (const Vec& tk : tilde) acc += huber(dist(tk, center), tau);
    return n * acc;
}

// Solves a*x = b for symmetric positive definite a via in-place Cholesky.
// Returns false when a pivot is not strictly positive (caller bumps the ridge).
inline bool solve_spd(Matrix a, const Vec& b, Vec& x) {
    const std::size_t d = b.size();
    for (std::size_t j = 0; j < d; ++j) {
        double pivot = a(j, j);
        for (std::size_t k = 0; k < j; ++k) pivot -= a(j, k) * a(j, k);
        if (!(pivot > 0.0)) return false;
        a(j, j) = std::sqrt(pivot);
        for (std::size_t i = j + 1; i < d; ++i) {
            double v = a(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= a(i, k) * a(j, k);
            a(i, j) = v / a(j, j);
        }
    }
    x.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k) v -= a(i, k) * x[k];
        x[i] = v / a(i, i);
    }
    for (std::size_t i = d; i-- > 0;) {
        double v = x[i];
        for (std::size_t k = i + 1; k < d; ++k) v -= a(k, i) * x[k];
        x[i] = v / a(i, i);
    }
    return true;
}

}  // namespace detail

inline AggregateResult central_update(const std::vector<Vec>& theta_tilde, double lambda,
                                      std::size_t n) {
    const std::size_t K = theta_tilde.size();
    if (K == 0) throw ContractError("central_update: K must be >= 1");
    if (n < 1) throw ContractError("central_update: n must be >= 1");
    if (std::isnan(lambda) || lambda < 0.0)
        throw ContractError("central_update: lambda must be >= 0");
    const std::size_t d = theta_tilde.front().size();
    if (d == 0) throw ContractError("central_update: zero-dimensional input");
    for (const Vec& v : theta_tilde) {
        if (v.size() != d) throw ContractError("central_update: dimension mismatch");
        for (double x : v)
            if (!std::isfinite(x)) throw NumericError("central_update: non-finite iterate");
    }

    const double nd = static_cast<double>(n);
    const double sqrt_n = std::sqrt(nd);

    AggregateResult res;
    res.center = mean_of(theta_tilde);

    auto finish = [&](bool collapsed) {
        res.per_task.resize(K);
        const double tau = lambda / sqrt_n;
        double objective = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            if (collapsed) {
                res.per_task[k] = res.center;
            } else {
                const double t = dist(theta_tilde[k], res.center);
                const double shrink = t <= tau ? 0.0 : 1.0 - tau / t;
                res.per_task[k] = res.center;
                axpy(shrink, sub(theta_tilde[k], res.center), res.per_task[k]);
            }
            objective += 0.5 * nd * dist_sq(res.per_task[k], theta_tilde[k]);
            if (lambda > 0.0 && !collapsed) {
                // sqrt(n)*lambda*||nu_k - nu_bar||; skipped when collapsed (zero).
                objective += sqrt_n * lambda * dist(res.per_task[k], res.center);
            }
        }
        res.objective = objective;
        return res;
    };

    // Penalty off: every task keeps its iterate; the center is flat in the
    // objective and returned as the arithmetic mean by convention.
    if (lambda == 0.0) {
        res.per_task = theta_tilde;
        res.objective = 0.0;
        return res;
    }

    double maxdist = 0.0;
    for (const Vec& tk : theta_tilde) maxdist = std::max(maxdist, dist(tk, res.center));

    // Full collapse: the mean with every nu_k = nu_bar satisfies the exact
    // first-order condition iff lambda >= sqrt(n) * max_k||tilde_k - mean||.
    // Covers K = 1 (maxdist 0) and lambda = +inf (NaiveAverage) bit-exactly.
    if (lambda >= sqrt_n * maxdist) return finish(true);

    const double tau = lambda / sqrt_n;
    Vec center = res.center;
    Vec grad(d), dir(d), cand(d);
    Matrix hess;
    const double tol = 1e-10 * nd * static_cast<double>(K);
    // 1/L for the nd*K-smooth objective; the guaranteed-progress fallback step.
    const double step0 = 1.0 / (nd * static_cast<double>(K));
    constexpr std::size_t kMaxIter = 2000;
    std::size_t iter = 0;
    for (; iter < kMaxIter; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        hess = Matrix(d, d);
        double trace = 0.0;
        for (const Vec& tk : theta_tilde) {
            const double t = dist(tk, center);
            if (t <= tau) {  // quadratic branch, includes t == 0
                for (std::size_t j = 0; j < d; ++j) {
                    grad[j] += nd * (center[j] - tk[j]);
                    hess(j, j) += nd;
                }
                trace += nd * static_cast<double>(d);
                continue;
            }
            const double w = nd * tau / t;
            for (std::size_t a = 0; a < d; ++a) {
                const double ua = (center[a] - tk[a]) / t;
                grad[a] += w * t * ua;
                hess(a, a) += w;
                for (std::size_t b = 0; b < d; ++b)
                    hess(a, b) -= w * ua * (center[b] - tk[b]) / t;
            }
            trace += w * static_cast<double>(d - 1);
        }
        const double gnorm_sq = norm_sq(grad);
        if (std::sqrt(gnorm_sq) <= tol) break;

        // Damped Newton handles the near-flat valleys where plain gradient
        // descent crawls (tangential curvature tau/t vs radial curvature 1).
        double ridge = std::max(trace / static_cast<double>(d), nd) * 1e-12;
        bool solved = false;
        for (int attempt = 0; attempt < 3 && !solved; ++attempt) {
            Matrix damped = hess;
            for (std::size_t j = 0; j < d; ++j) damped(j, j) += ridge;
            solved = detail::solve_spd(std::move(damped), grad, dir);
            ridge *= 1e6;
        }
        if (!solved) dir = grad;  // last resort: steepest descent direction

        const double f0 = detail::profiled_objective(theta_tilde, center, nd, tau);
        const double slope = dot(grad, dir);
        Vec best = center;
        double fbest = f0;
        double step = 1.0;
        for (int halving = 0; halving < 60; ++halving) {
            for (std::size_t j = 0; j < d; ++j) cand[j] = center[j] - step * dir[j];
            const double f1 = detail::profiled_objective(theta_tilde, cand, nd, tau);
            // Sufficient decrease must be representable: f1 == f0 would loop
            // on zero-progress steps below double granularity.
            if (f1 <= f0 - 1e-4 * step * slope && f1 < f0) {
                best = cand;
                fbest = f1;
                break;
            }
            step *= 0.5;
        }
        // Keep the classic 1/L guarantee when the Newton direction is poorly
        // scaled: take whichever candidate descends further.
        for (std::size_t j = 0; j < d; ++j) cand[j] = center[j] - step0 * grad[j];
        const double fgrad = detail::profiled_objective(theta_tilde, cand, nd, tau);
        if (fgrad < fbest) {
            best = cand;
            fbest = fgrad;
        }
        // No representable descent left: the C1 convex objective is flat at
        // double precision, accept the iterate as stationary.
        if (!(fbest < f0)) break;
        center = best;
    }
    if (iter >= kMaxIter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const Vec& tk : theta_tilde) {
            const double t = dist(tk, center);
            if (t == 0.0) continue;
            const double w = nd * std::min(1.0, tau / t);
            for (std::size_t j = 0; j < d; ++j) grad[j] += w * (center[j] - tk[j]);
        }
        const double gnorm = norm(grad);
        throw ConvergenceError("central_update: no convergence after " +
                                   std::to_string(kMaxIter) + " iterations (grad norm " +
                                   std::to_string(gnorm) + ")",
                               center, gnorm);
    }
    res.center = center;
    res.iterations = iter;
    return finish(false);
}

// Penalty schedule: current <- decay * current + additive_floor per round.
// Iterates converge monotonically to additive_floor / (1 - decay).
struct PenaltySchedule {
    double lambda0 = 0.0;
    double decay = 0.5;          // in (0, 1)
    double additive_floor = 0.0;
    double current = 0.0;
};

inline void validate(const PenaltySchedule& s, const char* where) {
    if (std::isnan(s.lambda0) || s.lambda0 < 0.0)
        throw ContractError(std::string(where) + ": lambda0 must be >= 0");
    if (!(s.decay > 0.0) || !(s.decay < 1.0))
        throw ContractError(std::string(where) + ": decay must lie in (0, 1)");
    if (std::isnan(s.additive_floor) || s.additive_floor < 0.0)
        throw ContractError(std::string(where) + ": additive_floor must be >= 0");
    if (std::isnan(s.current) || s.current < 0.0)
        throw ContractError(std::string(where) + ": current must be >= 0");
}

inline PenaltySchedule schedule_next(PenaltySchedule sched) {
    validate(sched, "schedule_next");
    sched.current = sched.decay * sched.current + sched.additive_floor;
    return sched;
}

// Computable surrogate for the theory schedule:
//   lambda0 = c_lambda0 * sqrt(n)
//   additive_floor = c_floor * (sqrt(d) + sqrt(log(R*K/delta_conf)))
inline PenaltySchedule default_schedule(std::size_t n, std::size_t d, std::size_t R,
                                        std::size_t K, double delta_conf, double c_lambda0,
                                        double c_floor, double decay = 0.5) {
    if (n < 1 || d < 1 || R < 1 || K < 1)
        throw ContractError("default_schedule: counts must be >= 1");
    if (!(delta_conf > 0.0) || !(delta_conf < 1.0))
        throw ContractError("default_schedule: delta_conf must lie in (0, 1)");
    if (c_lambda0 < 0.0 || c_floor < 0.0)
        throw ContractError("default_schedule: coefficients must be >= 0");
    PenaltySchedule s;
    s.lambda0 = c_lambda0 * std::sqrt(static_cast<double>(n));
    s.decay = decay;
    s.additive_floor =
        c_floor * (std::sqrt(static_cast<double>(d)) +
                   std::sqrt(std::log(static_cast<double>(R * K) / delta_conf)));
    s.current = s.lambda0;
    validate(s, "default_schedule");
    return s;
}

}  // namespace fedgrem
