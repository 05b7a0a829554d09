// Cross-task label alignment: the pairwise-distance score, exhaustive search
// with branch-and-bound, greedy stepwise search (with an exact linear
// assignment accelerator), and the evaluation-side matchers.
//
// Permutations are arrays of images: p[r] is the component index that label r
// refers to. compose(p, q)[r] = p[q[r]] (q applied on the index side first).
// The score is invariant exactly under a common inner reindex p_k -> p_k . iota,
// so alignment outputs and planted truths are compared up to one shared iota.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedgrem/assignment.hpp"
#include "fedgrem/rng.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

using Perm = std::vector<std::size_t>;
using ComponentList = std::vector<Vec>;

struct PermutationSet {
    std::vector<Perm> perms;
};

inline Perm identity_perm(std::size_t R) {
    Perm p(R);
    for (std::size_t r = 0; r < R; ++r) p[r] = r;
    return p;
}

inline bool is_permutation(const Perm& p) {
    std::vector<bool> seen(p.size(), false);
    for (std::size_t v : p) {
        if (v >= p.size() || seen[v]) return false;
        seen[v] = true;
    }
    return !p.empty();
}

// compose(p, q)[r] = p[q[r]]
inline Perm compose(const Perm& p, const Perm& q) {
    if (p.size() != q.size()) throw ContractError("compose: size mismatch");
    Perm out(p.size());
    for (std::size_t r = 0; r < q.size(); ++r) out[r] = p[q[r]];
    return out;
}

inline Perm inverse(const Perm& p) {
    Perm out(p.size());
    for (std::size_t r = 0; r < p.size(); ++r) out[p[r]] = r;
    return out;
}

// All permutations of {0..R-1} in lexicographic order.
inline std::vector<Perm> all_permutations(std::size_t R) {
    Perm p = identity_perm(R);
    std::vector<Perm> out;
    do {
        out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

namespace detail {

inline void check_estimates(const std::vector<ComponentList>& estimates, const char* where) {
    if (estimates.empty()) throw ContractError(std::string(where) + ": no estimates");
    const std::size_t R = estimates.front().size();
    if (R == 0) throw ContractError(std::string(where) + ": empty component list");
    const std::size_t d = estimates.front().front().size();
    for (const ComponentList& est : estimates) {
        if (est.size() != R)
            throw ContractError(std::string(where) + ": component count mismatch");
        for (const Vec& c : est)
            if (c.size() != d)
                throw ContractError(std::string(where) + ": dimension mismatch");
    }
}

inline double log2_factorial(std::size_t R) {
    double s = 0.0;
    for (std::size_t i = 2; i <= R; ++i) s += std::log2(static_cast<double>(i));
    return s;
}

}  // namespace detail

// Alignment score over the first k_limit tasks: the sum over ORDERED pairs
// k != k' of per-label distances ||est_k[p_k[r]] - est_k'[p_k'[r]]|| (each
// unordered pair counted twice, matching the double sum it implements).
inline double score(const PermutationSet& perms, const std::vector<ComponentList>& estimates,
                    std::size_t k_limit) {
    detail::check_estimates(estimates, "score");
    if (k_limit > estimates.size() || perms.perms.size() < k_limit)
        throw ContractError("score: k_limit out of range");
    const std::size_t R = estimates.front().size();
    for (std::size_t k = 0; k < k_limit; ++k)
        if (perms.perms[k].size() != R || !is_permutation(perms.perms[k]))
            throw ContractError("score: invalid permutation");
    double acc = 0.0;
    for (std::size_t k = 1; k < k_limit; ++k)
        for (std::size_t kp = 0; kp < k; ++kp)
            for (std::size_t r = 0; r < R; ++r)
                acc += dist(estimates[k][perms.perms[k][r]], estimates[kp][perms.perms[kp][r]]);
    return 2.0 * acc;
}

// Global minimizer of the score by depth-first enumeration in lexicographic
// order with branch-and-bound pruning; ties resolve to the lexicographically
// smallest flattened image sequence. Guard: K * log2(R!) <= 30.
inline PermutationSet align_exhaustive(const std::vector<ComponentList>& estimates) {
    detail::check_estimates(estimates, "align_exhaustive");
    const std::size_t K = estimates.size();
    const std::size_t R = estimates.front().size();
    if (static_cast<double>(K) * detail::log2_factorial(R) > 30.0 + 1e-9)
        throw CapacityError(
            "align_exhaustive: K*log2(R!) exceeds 30; use align_stepwise instead");
    const std::vector<Perm> candidates = all_permutations(R);
    // dist_table[k][kp](a, b) = ||est_k[a] - est_kp[b]|| for kp < k.
    std::vector<std::vector<Matrix>> dist_table(K);
    for (std::size_t k = 1; k < K; ++k) {
        dist_table[k].resize(k);
        for (std::size_t kp = 0; kp < k; ++kp) {
            Matrix m(R, R);
            for (std::size_t a = 0; a < R; ++a)
                for (std::size_t b = 0; b < R; ++b)
                    m(a, b) = dist(estimates[k][a], estimates[kp][b]);
            dist_table[k][kp] = std::move(m);
        }
    }
    std::vector<Perm> chosen(K);
    std::vector<Perm> best;
    double best_score = std::numeric_limits<double>::infinity();
    auto dfs = [&](auto&& self, std::size_t k, double partial) -> void {
        if (k == K) {
            best = chosen;  // strict < below makes the first hit lex-smallest
            best_score = partial;
            return;
        }
        for (const Perm& p : candidates) {
            double inc = 0.0;
            for (std::size_t kp = 0; kp < k; ++kp) {
                const Matrix& m = dist_table[k][kp];
                for (std::size_t r = 0; r < R; ++r) inc += m(p[r], chosen[kp][r]);
            }
            const double next = partial + 2.0 * inc;
            if (next < best_score) {
                chosen[k] = p;
                self(self, k + 1, next);
            }
        }
    };
    dfs(dfs, 0, 0.0);
    return PermutationSet{std::move(best)};
}

enum class StepwiseMode { Enumerate, Assignment };

// Greedy sequential optimizer: fix earlier tasks' permutations, choose the
// best permutation for task k against them. The per-task subproblem
// decomposes additively over labels, so Assignment mode (Hungarian on
// C[a][r] = sum_{k'<k} ||est_k[a] - est_k'[chosen_k'[r]]||) is exact, not a
// heuristic; Enumerate mode is the R! cross-check (guard R <= 10).
inline PermutationSet align_stepwise(const std::vector<ComponentList>& estimates,
                                     StepwiseMode mode) {
    detail::check_estimates(estimates, "align_stepwise");
    const std::size_t K = estimates.size();
    const std::size_t R = estimates.front().size();
    if (mode == StepwiseMode::Enumerate && R > 10)
        throw CapacityError("align_stepwise: Enumerate mode guards R <= 10");
    PermutationSet out;
    out.perms.resize(K);
    out.perms[0] = identity_perm(R);  // score over one task is 0; lex tie-break
    std::vector<Perm> candidates;
    if (mode == StepwiseMode::Enumerate) candidates = all_permutations(R);
    for (std::size_t k = 1; k < K; ++k) {
        Matrix c(R, R);  // c(a, r): cost of letting label r use component a
        for (std::size_t a = 0; a < R; ++a)
            for (std::size_t r = 0; r < R; ++r) {
                double acc = 0.0;
                for (std::size_t kp = 0; kp < k; ++kp)
                    acc += dist(estimates[k][a], estimates[kp][out.perms[kp][r]]);
                c(a, r) = acc;
            }
        if (mode == StepwiseMode::Enumerate) {
            double best_cost = std::numeric_limits<double>::infinity();
            for (const Perm& p : candidates) {
                double cost = 0.0;
                for (std::size_t r = 0; r < R; ++r) cost += c(p[r], r);
                if (cost < best_cost) {
                    best_cost = cost;
                    out.perms[k] = p;
                }
            }
        } else {
            Matrix rows_by_label(R, R);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t a = 0; a < R; ++a) rows_by_label(r, a) = c(a, r);
            out.perms[k] = hungarian(rows_by_label);
        }
    }
    return out;
}

// Optional extension (excluded from acceptance): stepwise over shuffled task
// orders with a per-task majority vote. Runs are canonicalized by composing
// with the inverse of task 0's permutation before voting; vote ties break
// lexicographically.
inline PermutationSet align_stepwise_shuffled(const std::vector<ComponentList>& estimates,
                                              std::size_t shuffles, SplitMix64& rng) {
    detail::check_estimates(estimates, "align_stepwise_shuffled");
    if (shuffles < 1) throw ContractError("align_stepwise_shuffled: shuffles must be >= 1");
    const std::size_t K = estimates.size();
    std::vector<std::map<Perm, std::size_t>> votes(K);
    for (std::size_t s = 0; s < shuffles; ++s) {
        std::vector<std::size_t> order(K);
        for (std::size_t k = 0; k < K; ++k) order[k] = k;
        for (std::size_t k = 0; k + 1 < K; ++k) {
            const std::size_t pick = k + static_cast<std::size_t>(rng.below(K - k));
            std::swap(order[k], order[pick]);
        }
        std::vector<ComponentList> shuffled(K);
        for (std::size_t k = 0; k < K; ++k) shuffled[k] = estimates[order[k]];
        const PermutationSet res = align_stepwise(shuffled, StepwiseMode::Assignment);
        std::vector<Perm> unshuffled(K);
        for (std::size_t k = 0; k < K; ++k) unshuffled[order[k]] = res.perms[k];
        const Perm iota = inverse(unshuffled[0]);
        for (std::size_t k = 0; k < K; ++k) ++votes[k][compose(unshuffled[k], iota)];
    }
    PermutationSet out;
    out.perms.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t best_count = 0;
        for (const auto& [perm, count] : votes[k]) {
            if (count > best_count) {  // map iterates in lex order; ties keep first
                best_count = count;
                out.perms[k] = perm;
            }
        }
    }
    return out;
}

// Exact best match of an estimate's components onto a reference truth:
// argmin_p sum_r ||est[p[r]] - truth[r]|| via assignment; returns the
// permutation and the aligned per-label distances.
inline std::pair<Perm, Vec> best_permutation_match(const ComponentList& estimate,
                                                   const ComponentList& truth) {
    if (estimate.empty() || estimate.size() != truth.size())
        throw ContractError("best_permutation_match: component count mismatch");
    const std::size_t R = estimate.size();
    Matrix cost(R, R);
    for (std::size_t r = 0; r < R; ++r) {
        if (truth[r].size() != estimate[0].size())
            throw ContractError("best_permutation_match: dimension mismatch");
        for (std::size_t a = 0; a < R; ++a) cost(r, a) = dist(estimate[a], truth[r]);
    }
    const Perm p = hungarian(cost);
    Vec dists(R);
    for (std::size_t r = 0; r < R; ++r) dists[r] = cost(r, p[r]);
    return {p, dists};
}

// Evaluation under one shared relabeling: enumerate iota in lexicographic
// order (guard R <= 8) and keep the one minimizing the max aligned theta
// error over all given tasks; the weight error is reported under the same
// iota. Inlier filtering is the caller's responsibility.
struct CommonRelabelError {
    Perm iota;
    double err_theta = 0.0;
    double err_w = 0.0;
};

inline CommonRelabelError common_relabel_error(const std::vector<MixtureParams>& estimates,
                                               const std::vector<MixtureParams>& truths) {
    if (estimates.empty() || estimates.size() != truths.size())
        throw ContractError("common_relabel_error: estimate/truth count mismatch");
    const std::size_t R = truths.front().R();
    if (R > 8)
        throw CapacityError("common_relabel_error: R! enumeration guards R <= 8");
    for (std::size_t k = 0; k < truths.size(); ++k)
        if (estimates[k].R() != R || truths[k].R() != R ||
            estimates[k].dim() != truths[k].dim())
            throw ContractError("common_relabel_error: shape mismatch");
    CommonRelabelError best;
    best.err_theta = std::numeric_limits<double>::infinity();
    for (const Perm& iota : all_permutations(R)) {
        double err = 0.0;
        for (std::size_t k = 0; k < truths.size(); ++k)
            for (std::size_t r = 0; r < R; ++r)
                err = std::max(err, dist(estimates[k].components[iota[r]],
                                         truths[k].components[r]));
        if (err < best.err_theta) {  // strict keeps the lex-smallest iota
            best.err_theta = err;
            best.iota = iota;
        }
    }
    for (std::size_t k = 0; k < truths.size(); ++k)
        for (std::size_t r = 0; r < R; ++r)
            best.err_w = std::max(best.err_w, std::abs(estimates[k].weights[best.iota[r]] -
                                                       truths[k].weights[r]));
    return best;
}

// Test helper: do the recovered permutations equal the planted ones up to one
// common iota on the masked-in tasks?
inline bool equal_up_to_common_relabel(const PermutationSet& recovered,
                                       const PermutationSet& planted,
                                       const std::vector<char>& mask) {
    if (recovered.perms.size() != planted.perms.size() ||
        mask.size() != planted.perms.size())
        throw ContractError("equal_up_to_common_relabel: size mismatch");
    std::size_t first = mask.size();
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) {
            first = k;
            break;
        }
    if (first == mask.size()) return true;
    const Perm iota = compose(inverse(planted.perms[first]), recovered.perms[first]);
    for (std::size_t k = first; k < mask.size(); ++k)
        if (mask[k] && recovered.perms[k] != compose(planted.perms[k], iota)) return false;
    return true;
}

}  // namespace fedgrem
