// Model-family layer: posteriors (E-step), the empirical surrogate Q_hat and
// its gradient, weight and exact M-steps, sampling, and log-likelihood for
// Gaussian mixtures (GMM) and mixtures of regressions (MoR).
//
// Conventions shared with the tests and documented in the README:
//   - q_hat_value drops model-constant terms (GMM: -(d/2)log 2pi per point;
//     MoR: the x-marginal and -(1/2)log 2pi). Only differences and gradients
//     of Q_hat matter, and the frozen posterior rows sum to 1, so the dropped
//     terms are parameter-free.
//   - log_likelihood keeps all density constants (GMM: isotropic unit-variance
//     components; MoR: joint density of (x, y) with x ~ N(0, I_d)).
//   - All reductions run in fixed index order (i outer, r inner, coordinates
//     innermost) for bit-reproducibility.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fedgrem/rng.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

namespace detail {

inline void check_pairing(ModelKind kind, const MixtureParams& params,
                          const TaskDataset& data, const char* where) {
    validate(params, where);
    validate(data, where);
    if (data.kind != kind)
        throw ContractError(std::string(where) + ": dataset variant does not match kind");
    if (params.dim() != data.dim())
        throw ContractError(std::string(where) + ": params/data dimension mismatch");
}

}  // namespace detail

// Per-row component log-odds against the reference component 0:
//   GMM: g_ir = x_i'(theta_r - theta_0) - (||theta_r||^2 - ||theta_0||^2)/2 + log w_r
//   MoR: g_ir = y_i x_i'(theta_r - theta_0) - ((x_i'theta_r)^2 - (x_i'theta_0)^2)/2 + log w_r
// The reference cancels after normalization; a test asserts reference invariance.
inline Matrix posterior_logits(ModelKind kind, const MixtureParams& params,
                               const TaskDataset& data, std::size_t reference = 0) {
    detail::check_pairing(kind, params, data, "posterior_logits");
    if (reference >= params.R())
        throw ContractError("posterior_logits: reference component out of range");
    const std::size_t n = data.n();
    const std::size_t R = params.R();
    Vec log_w(R), half_norm(R);
    for (std::size_t r = 0; r < R; ++r) {
        log_w[r] = std::log(params.weights[r]);
        half_norm[r] = 0.5 * norm_sq(params.components[r]);
    }
    Matrix logits(n, R);
    Vec proj(R);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = data.x.row(i);
        for (std::size_t r = 0; r < R; ++r) proj[r] = dot(xi, params.components[r]);
        for (std::size_t r = 0; r < R; ++r) {
            if (kind == ModelKind::GMM) {
                logits(i, r) = (proj[r] - proj[reference]) - (half_norm[r] - half_norm[reference]) +
                               log_w[r];
            } else {
                logits(i, r) = data.y[i] * (proj[r] - proj[reference]) -
                               0.5 * (proj[r] * proj[r] - proj[reference] * proj[reference]) +
                               log_w[r];
            }
        }
    }
    return logits;
}

// E-step responsibilities, normalized with max-subtracted exponentiation.
inline PosteriorMatrix posterior(ModelKind kind, const MixtureParams& params,
                                 const TaskDataset& data) {
    Matrix logits = posterior_logits(kind, params, data);
    const std::size_t n = logits.rows();
    const std::size_t R = logits.cols();
    PosteriorMatrix post{Matrix(n, R)};
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits(i, 0);
        for (std::size_t r = 1; r < R; ++r) mx = std::max(mx, logits(i, r));
        if (!std::isfinite(mx))
            throw NumericError("posterior: non-finite logit in row " + std::to_string(i));
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            const double e = std::exp(logits(i, r) - mx);
            post.values(i, r) = e;
            sum += e;
        }
        for (std::size_t r = 0; r < R; ++r) post.values(i, r) /= sum;
    }
    return post;
}

// Surrogate value at params_eval with the posterior frozen:
//   GMM: -(1/2n) sum_i sum_r gamma_ir ||x_i - theta_r||^2
//   MoR: -(1/2n) sum_i sum_r gamma_ir (y_i - x_i'theta_r)^2
inline double q_hat_value(ModelKind kind, const MixtureParams& params_eval,
                          const PosteriorMatrix& post, const TaskDataset& data) {
    detail::check_pairing(kind, params_eval, data, "q_hat_value");
    if (post.n() != data.n() || post.R() != params_eval.R())
        throw ContractError("q_hat_value: posterior shape mismatch");
    const std::size_t n = data.n();
    const std::size_t R = params_eval.R();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = data.x.row(i);
        for (std::size_t r = 0; r < R; ++r) {
            double resid_sq;
            if (kind == ModelKind::GMM) {
                resid_sq = dist_sq(xi, params_eval.components[r]);
            } else {
                const double resid = data.y[i] - dot(xi, params_eval.components[r]);
                resid_sq = resid * resid;
            }
            acc += post.values(i, r) * resid_sq;
        }
    }
    return -acc / (2.0 * static_cast<double>(n));
}

// Gradient of q_hat_value with respect to each theta_r, posterior frozen:
//   GMM: -(1/n) sum_i gamma_ir (theta_r - x_i)
//   MoR: -(1/n) sum_i gamma_ir x_i (x_i'theta_r - y_i)
inline std::vector<Vec> q_hat_gradient(ModelKind kind, const MixtureParams& params_eval,
                                       const PosteriorMatrix& post, const TaskDataset& data) {
    detail::check_pairing(kind, params_eval, data, "q_hat_gradient");
    if (post.n() != data.n() || post.R() != params_eval.R())
        throw ContractError("q_hat_gradient: posterior shape mismatch");
    const std::size_t n = data.n();
    const std::size_t R = params_eval.R();
    const std::size_t d = data.dim();
    std::vector<Vec> grad(R, Vec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = data.x.row(i);
        for (std::size_t r = 0; r < R; ++r) {
            const double g = post.values(i, r);
            if (kind == ModelKind::GMM) {
                for (std::size_t j = 0; j < d; ++j)
                    grad[r][j] += g * (xi[j] - params_eval.components[r][j]);
            } else {
                const double resid = dot(xi, params_eval.components[r]) - data.y[i];
                for (std::size_t j = 0; j < d; ++j) grad[r][j] -= g * resid * xi[j];
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Vec& g : grad)
        for (double& v : g) v *= inv_n;
    return grad;
}

// M-step for the mixture proportions: posterior column means (on the simplex).
inline Vec weight_m_step(const PosteriorMatrix& post) {
    validate(post, "weight_m_step");
    const std::size_t n = post.n();
    const std::size_t R = post.R();
    Vec w(R, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < R; ++r) w[r] += post.values(i, r);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& v : w) v *= inv_n;
    return w;
}

// Full-EM component update for GMM: responsibility-weighted means.
// A column with mass below 1e-12 has lost its cluster.
inline std::vector<Vec> exact_m_step_gmm(const PosteriorMatrix& post, const TaskDataset& data) {
    validate(post, "exact_m_step_gmm");
    validate(data, "exact_m_step_gmm");
    if (data.kind != ModelKind::GMM)
        throw ContractError("exact_m_step_gmm: GMM data required");
    if (post.n() != data.n()) throw ContractError("exact_m_step_gmm: posterior shape mismatch");
    const std::size_t n = data.n();
    const std::size_t R = post.R();
    const std::size_t d = data.dim();
    std::vector<Vec> theta(R, Vec(d, 0.0));
    Vec mass(R, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = data.x.row(i);
        for (std::size_t r = 0; r < R; ++r) {
            const double g = post.values(i, r);
            mass[r] += g;
            for (std::size_t j = 0; j < d; ++j) theta[r][j] += g * xi[j];
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        if (mass[r] < 1e-12)
            throw DegenerateClusterError("exact_m_step_gmm: component " + std::to_string(r) +
                                         " has vanishing posterior mass");
        for (double& v : theta[r]) v /= mass[r];
    }
    return theta;
}

// Draws n observations and returns the latent labels too (debug interface).
// Draw order per observation: label, then d normals for x, then (MoR) one
// normal for the response noise. This order is part of the seed contract.
inline std::pair<TaskDataset, std::vector<std::size_t>> sample_with_labels(
    ModelKind kind, const MixtureParams& params, std::size_t n, SplitMix64& rng) {
    validate(params, "sample");
    if (n < 1) throw ContractError("sample: n must be >= 1");
    const std::size_t d = params.dim();
    TaskDataset data;
    data.kind = kind;
    data.x = Matrix(n, d);
    if (kind == ModelKind::MoR) data.y.resize(n);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t z = rng.categorical(params.weights);
        labels[i] = z;
        if (kind == ModelKind::GMM) {
            for (std::size_t j = 0; j < d; ++j)
                data.x(i, j) = params.components[z][j] + rng.normal();
        } else {
            for (std::size_t j = 0; j < d; ++j) data.x(i, j) = rng.normal();
            data.y[i] = dot(data.x.row(i), params.components[z]) + rng.normal();
        }
    }
    return {std::move(data), std::move(labels)};
}

// i.i.d. draws from the mixture; labels are not exposed through this interface.
inline TaskDataset sample(ModelKind kind, const MixtureParams& params, std::size_t n,
                          SplitMix64& rng) {
    return sample_with_labels(kind, params, n, rng).first;
}

// Mean per-observation log density under the mixture, all constants included.
inline double log_likelihood(ModelKind kind, const MixtureParams& params,
                             const TaskDataset& data) {
    detail::check_pairing(kind, params, data, "log_likelihood");
    const std::size_t n = data.n();
    const std::size_t R = params.R();
    const std::size_t d = data.dim();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    Vec log_w(R);
    for (std::size_t r = 0; r < R; ++r) log_w[r] = std::log(params.weights[r]);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = data.x.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        Vec terms(R);
        for (std::size_t r = 0; r < R; ++r) {
            double resid_sq;
            if (kind == ModelKind::GMM) {
                resid_sq = dist_sq(xi, params.components[r]);
            } else {
                const double resid = data.y[i] - dot(xi, params.components[r]);
                resid_sq = resid * resid;
            }
            terms[r] = log_w[r] - 0.5 * resid_sq;
            mx = std::max(mx, terms[r]);
        }
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) sum += std::exp(terms[r] - mx);
        double li = mx + std::log(sum);
        if (kind == ModelKind::GMM) {
            li -= 0.5 * static_cast<double>(d) * log_2pi;
        } else {
            li -= 0.5 * log_2pi;                                    // response noise
            li -= 0.5 * static_cast<double>(d) * log_2pi + 0.5 * norm_sq(xi);  // x-marginal
        }
        acc += li;
    }
    const double out = acc / static_cast<double>(n);
    if (!std::isfinite(out)) throw NumericError("log_likelihood: non-finite result");
    return out;
}

// Relabeled copy: component r of the result is component perm[r] of the input,
// weights permuted alongside.
inline MixtureParams permute_components(const MixtureParams& params,
                                        const std::vector<std::size_t>& perm) {
    if (perm.size() != params.R())
        throw ContractError("permute_components: permutation length mismatch");
    MixtureParams out;
    out.weights.resize(params.R());
    out.components.resize(params.R());
    for (std::size_t r = 0; r < perm.size(); ++r) {
        if (perm[r] >= params.R())
            throw ContractError("permute_components: index out of range");
        out.weights[r] = params.weights[perm[r]];
        out.components[r] = params.components[perm[r]];
    }
    return out;
}

}  // namespace fedgrem
