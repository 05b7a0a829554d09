// Single-task layer: gradient EM (one E-step, weight M-step, one gradient
// ascent M-step), a full-EM baseline for GMM, step-size plans, and
// initialization strategies.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fedgrem/model.hpp"
#include "fedgrem/rng.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

// Step-size rule. Corollary rules divide by the round-0 weight estimate:
//   CorollaryGMM: eta_r = (1 + C_b)^-1 * (w_r^[0])^-1
//   CorollaryMoR: eta_r = (1 + 2 C_b)^-1 * (w_r^[0])^-1
// clamped into [eta_min, eta_max] (estimated weights can be tiny pre-convergence).
// Backtracking halves a global scale until Q_hat does not decrease; default OFF
// elsewhere because the analysis assumes constant steps.
struct StepRule {
    enum class Kind { CorollaryGMM, CorollaryMoR, Fixed, Backtracking };
    Kind kind = Kind::CorollaryGMM;
    double c_b = 0.25;        // Corollary rules
    double eta = 0.5;         // Fixed
    double eta0 = 1.0;        // Backtracking initial step
    int halvings_max = 20;    // Backtracking budget
    double eta_min = 1e-3;    // Corollary clamp
    double eta_max = 1e3;

    static StepRule corollary_gmm(double c_b) {
        StepRule r;
        r.kind = Kind::CorollaryGMM;
        r.c_b = c_b;
        return r;
    }
    static StepRule corollary_mor(double c_b) {
        StepRule r;
        r.kind = Kind::CorollaryMoR;
        r.c_b = c_b;
        return r;
    }
    static StepRule fixed(double eta) {
        StepRule r;
        r.kind = Kind::Fixed;
        r.eta = eta;
        return r;
    }
    static StepRule backtracking(double eta0, int halvings_max = 20) {
        StepRule r;
        r.kind = Kind::Backtracking;
        r.eta0 = eta0;
        r.halvings_max = halvings_max;
        return r;
    }
};

// Per-component step sizes cached from the round-0 weights.
struct StepSizePlan {
    StepRule rule;
    Vec eta;  // length R, all positive and finite
};

inline StepSizePlan make_step_plan(const StepRule& rule, const Vec& initial_weights) {
    if (initial_weights.empty())
        throw ContractError("make_step_plan: empty initial weights");
    double sum = 0.0;
    for (double w : initial_weights) {
        if (!(w > 0.0) || !std::isfinite(w))
            throw ContractError("make_step_plan: initial weights must be positive");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError("make_step_plan: initial weights must lie on the simplex");
    StepSizePlan plan;
    plan.rule = rule;
    plan.eta.resize(initial_weights.size());
    for (std::size_t r = 0; r < initial_weights.size(); ++r) {
        double e;
        switch (rule.kind) {
            case StepRule::Kind::CorollaryGMM:
                e = 1.0 / ((1.0 + rule.c_b) * initial_weights[r]);
                e = std::clamp(e, rule.eta_min, rule.eta_max);
                break;
            case StepRule::Kind::CorollaryMoR:
                e = 1.0 / ((1.0 + 2.0 * rule.c_b) * initial_weights[r]);
                e = std::clamp(e, rule.eta_min, rule.eta_max);
                break;
            case StepRule::Kind::Fixed:
                e = rule.eta;
                break;
            case StepRule::Kind::Backtracking:
                e = rule.eta0;
                break;
            default:
                throw ContractError("make_step_plan: unknown rule");
        }
        if (!(e > 0.0) || !std::isfinite(e))
            throw ContractError("make_step_plan: step size must be positive and finite");
        plan.eta[r] = e;
    }
    return plan;
}

// One local update: posterior at the OLD parameters feeds both the weight
// M-step and the gradient ascent step (theta_r + eta_r * grad_r).
inline MixtureParams gradient_em_step(ModelKind kind, const MixtureParams& params,
                                      const TaskDataset& data, const StepSizePlan& plan) {
    if (plan.eta.size() != params.R())
        throw ContractError("gradient_em_step: plan/params size mismatch");
    const PosteriorMatrix post = posterior(kind, params, data);
    MixtureParams out;
    out.weights = weight_m_step(post);
    const std::vector<Vec> grad = q_hat_gradient(kind, params, post, data);
    const std::size_t R = params.R();
    out.components.resize(R);
    double scale = 1.0;
    for (int attempt = 0;; ++attempt) {
        for (std::size_t r = 0; r < R; ++r) {
            out.components[r] = params.components[r];
            axpy(scale * plan.eta[r], grad[r], out.components[r]);
        }
        if (plan.rule.kind != StepRule::Kind::Backtracking) break;
        const double before = q_hat_value(kind, params, post, data);
        const double after = q_hat_value(kind, out, post, data);
        if (after >= before || attempt >= plan.rule.halvings_max) break;
        scale *= 0.5;
    }
    return out;
}

// Full-EM step for GMM (exact M-step instead of one gradient step).
inline MixtureParams full_em_step_gmm(const MixtureParams& params, const TaskDataset& data) {
    const PosteriorMatrix post = posterior(ModelKind::GMM, params, data);
    MixtureParams out;
    out.weights = weight_m_step(post);
    out.components = exact_m_step_gmm(post, data);
    return out;
}

// trajectory[0] = init, trajectory[t] = gradient_em_step(trajectory[t-1]);
// per-step mean log-likelihood recorded for monitoring (length T+1).
struct LocalTrajectory {
    std::vector<MixtureParams> params;
    Vec log_likelihoods;
};

inline LocalTrajectory run_local(ModelKind kind, const TaskDataset& data,
                                 const MixtureParams& init, const StepSizePlan& plan,
                                 std::size_t T, bool full_em = false) {
    LocalTrajectory traj;
    traj.params.reserve(T + 1);
    traj.params.push_back(init);
    traj.log_likelihoods.push_back(log_likelihood(kind, init, data));
    for (std::size_t t = 1; t <= T; ++t) {
        const MixtureParams& prev = traj.params.back();
        MixtureParams next = full_em ? full_em_step_gmm(prev, data)
                                     : gradient_em_step(kind, prev, data, plan);
        traj.log_likelihoods.push_back(log_likelihood(kind, next, data));
        traj.params.push_back(std::move(next));
    }
    return traj;
}

// Initialization strategies.
//   OraclePerturb(delta_w, delta_theta): truth plus uniform perturbations;
//     weights get i.i.d. uniform(-delta_w, delta_w), clipped at half the
//     smallest true weight, renormalized; components get uniform ball noise
//     of radius delta_theta. delta = 0 skips the corresponding path entirely,
//     so OraclePerturb(0, 0) returns the truth bit-exactly.
//   KMeansLloyd(restarts, iters): GMM only; farthest-point seeding from a
//     random data row, Lloyd iterations, best inertia wins; weights are
//     cluster fractions floored at 1e-6.
//   RandomRestarts(restarts): best log-likelihood among random draws (GMM
//     components are distinct data rows; MoR components are N(0, I) draws,
//     best-effort below the oracle regime).
struct InitStrategy {
    enum class Kind { OraclePerturb, KMeansLloyd, RandomRestarts };
    Kind kind = Kind::OraclePerturb;
    double delta_w = 0.0;
    double delta_theta = 0.0;
    int restarts = 10;
    int iters = 25;
    std::size_t R = 0;  // component count for data-driven strategies

    static InitStrategy oracle_perturb(double delta_w, double delta_theta) {
        InitStrategy s;
        s.kind = Kind::OraclePerturb;
        s.delta_w = delta_w;
        s.delta_theta = delta_theta;
        return s;
    }
    static InitStrategy kmeans_lloyd(std::size_t R, int restarts = 10, int iters = 25) {
        InitStrategy s;
        s.kind = Kind::KMeansLloyd;
        s.R = R;
        s.restarts = restarts;
        s.iters = iters;
        return s;
    }
    static InitStrategy random_restarts(std::size_t R, int restarts = 10) {
        InitStrategy s;
        s.kind = Kind::RandomRestarts;
        s.R = R;
        s.restarts = restarts;
        return s;
    }
};

namespace detail {

// Farthest-point seeding: start from the given row, then repeatedly take the
// row farthest from its nearest chosen centroid.
inline std::vector<Vec> kmeans_seed_farthest(const TaskDataset& data, std::size_t R,
                                             std::size_t first_row) {
    std::vector<Vec> centroids;
    centroids.reserve(R);
    const auto row0 = data.x.row(first_row);
    centroids.emplace_back(row0.begin(), row0.end());
    Vec nearest(data.n());
    for (std::size_t i = 0; i < data.n(); ++i)
        nearest[i] = dist_sq(data.x.row(i), centroids[0]);
    while (centroids.size() < R) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < data.n(); ++i)
            if (nearest[i] > nearest[far]) far = i;
        const auto row = data.x.row(far);
        centroids.emplace_back(row.begin(), row.end());
        for (std::size_t i = 0; i < data.n(); ++i)
            nearest[i] = std::min(nearest[i], dist_sq(data.x.row(i), centroids.back()));
    }
    return centroids;
}

// Lloyd iterations. Assignment ties go to the lowest cluster index; an empty
// cluster keeps its previous centroid. Returns final inertia.
inline double lloyd_iterate(const TaskDataset& data, std::vector<Vec>& centroids, int iters,
                            std::vector<std::size_t>& assign) {
    const std::size_t n = data.n();
    const std::size_t d = data.dim();
    const std::size_t R = centroids.size();
    assign.assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = dist_sq(data.x.row(i), centroids[0]);
            for (std::size_t r = 1; r < R; ++r) {
                const double dd = dist_sq(data.x.row(i), centroids[r]);
                if (dd < best_d) {
                    best_d = dd;
                    best = r;
                }
            }
            assign[i] = best;
        }
        std::vector<Vec> sums(R, Vec(d, 0.0));
        std::vector<std::size_t> counts(R, 0);
        for (std::size_t i = 0; i < n; ++i) {
            axpy(1.0, data.x.row(i), sums[assign[i]]);
            ++counts[assign[i]];
        }
        for (std::size_t r = 0; r < R; ++r) {
            if (counts[r] == 0) continue;
            for (std::size_t j = 0; j < d; ++j)
                centroids[r][j] = sums[r][j] / static_cast<double>(counts[r]);
        }
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_d = dist_sq(data.x.row(i), centroids[0]);
        for (std::size_t r = 1; r < R; ++r) {
            const double dd = dist_sq(data.x.row(i), centroids[r]);
            if (dd < best_d) {
                best_d = dd;
                best = r;
            }
        }
        assign[i] = best;
        inertia += best_d;
    }
    return inertia;
}

inline Vec cluster_fractions(const std::vector<std::size_t>& assign, std::size_t R) {
    Vec w(R, 0.0);
    for (std::size_t a : assign) w[a] += 1.0;
    double sum = 0.0;
    for (double& v : w) {
        v = std::max(v / static_cast<double>(assign.size()), 1e-6);
        sum += v;
    }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

inline MixtureParams initialize(const InitStrategy& strategy, ModelKind kind,
                                const TaskDataset& data, const MixtureParams* truth,
                                SplitMix64& rng) {
    validate(data, "initialize");
    if (strategy.restarts < 1 || strategy.iters < 1)
        throw ContractError("initialize: restarts and iters must be >= 1");
    switch (strategy.kind) {
        case InitStrategy::Kind::OraclePerturb: {
            if (truth == nullptr)
                throw ContractError("initialize: OraclePerturb requires the truth");
            if (strategy.delta_w < 0.0 || strategy.delta_theta < 0.0)
                throw ContractError("initialize: perturbation radii must be >= 0");
            MixtureParams out = *truth;
            if (strategy.delta_w > 0.0) {
                double floor = *std::min_element(truth->weights.begin(), truth->weights.end());
                floor *= 0.5;
                double sum = 0.0;
                for (double& w : out.weights) {
                    w = std::max(w + rng.uniform(-strategy.delta_w, strategy.delta_w), floor);
                    sum += w;
                }
                for (double& w : out.weights) w /= sum;
            }
            if (strategy.delta_theta > 0.0) {
                for (Vec& c : out.components)
                    axpy(1.0, rng.ball_uniform(c.size(), strategy.delta_theta), c);
            }
            return out;
        }
        case InitStrategy::Kind::KMeansLloyd: {
            if (kind != ModelKind::GMM)
                throw ContractError("initialize: KMeansLloyd requires GMM data");
            if (strategy.R < 1 || strategy.R > data.n())
                throw ContractError("initialize: KMeansLloyd needs 1 <= R <= n");
            std::vector<Vec> best_centroids;
            std::vector<std::size_t> best_assign;
            double best_inertia = std::numeric_limits<double>::infinity();
            for (int restart = 0; restart < strategy.restarts; ++restart) {
                const std::size_t first = static_cast<std::size_t>(rng.below(data.n()));
                std::vector<Vec> centroids =
                    detail::kmeans_seed_farthest(data, strategy.R, first);
                std::vector<std::size_t> assign;
                const double inertia = detail::lloyd_iterate(data, centroids, strategy.iters, assign);
                if (inertia < best_inertia) {
                    best_inertia = inertia;
                    best_centroids = std::move(centroids);
                    best_assign = std::move(assign);
                }
            }
            MixtureParams out;
            out.components = std::move(best_centroids);
            out.weights = detail::cluster_fractions(best_assign, strategy.R);
            return out;
        }
        case InitStrategy::Kind::RandomRestarts: {
            if (strategy.R < 1) throw ContractError("initialize: R must be >= 1");
            if (kind == ModelKind::GMM && strategy.R > data.n())
                throw ContractError("initialize: RandomRestarts needs R <= n for GMM");
            MixtureParams best;
            double best_ll = -std::numeric_limits<double>::infinity();
            for (int restart = 0; restart < strategy.restarts; ++restart) {
                MixtureParams cand;
                Vec dir = rng.dirichlet(strategy.R, 1.0);
                cand.weights.resize(strategy.R);
                double sum = 0.0;
                for (std::size_t r = 0; r < strategy.R; ++r) {
                    cand.weights[r] = 0.8 * dir[r] + 0.2 / static_cast<double>(strategy.R);
                    sum += cand.weights[r];
                }
                for (double& w : cand.weights) w /= sum;
                cand.components.resize(strategy.R);
                if (kind == ModelKind::GMM) {
                    std::vector<std::size_t> rows(data.n());
                    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
                    for (std::size_t r = 0; r < strategy.R; ++r) {
                        const std::size_t pick = r + static_cast<std::size_t>(
                                                         rng.below(rows.size() - r));
                        std::swap(rows[r], rows[pick]);
                        const auto row = data.x.row(rows[r]);
                        cand.components[r].assign(row.begin(), row.end());
                    }
                } else {
                    for (std::size_t r = 0; r < strategy.R; ++r) {
                        cand.components[r].resize(data.dim());
                        for (double& v : cand.components[r]) v = rng.normal();
                    }
                }
                const double ll = log_likelihood(kind, cand, data);
                if (ll > best_ll) {
                    best_ll = ll;
                    best = std::move(cand);
                }
            }
            return best;
        }
    }
    throw ContractError("initialize: unknown strategy");
}

}  // namespace fedgrem
