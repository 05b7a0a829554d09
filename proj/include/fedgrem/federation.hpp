// Federated orchestration: the per-round exchange (local gradient-EM update,
// then one central shrinkage per component index), baseline modes, message
// log with barrier semantics, and the per-round error probe.
//
// Weights are never aggregated: each task keeps its own mixture proportions
// (heterogeneous proportions are a premise of the setting), and they are
// computed from the pre-aggregation posterior. Every mode advances and logs
// the penalty schedule so that runs stay byte-comparable across the mode
// lattice; only FedGrEM actually consumes lambda.
#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedgrem/aggregate.hpp"
#include "fedgrem/align.hpp"
#include "fedgrem/local.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

enum class Mode { FedGrEM, NaiveAverage, LocalOnly, Pooled };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::FedGrEM: return "fedgrem";
        case Mode::NaiveAverage: return "naiveaverage";
        case Mode::LocalOnly: return "localonly";
        case Mode::Pooled: return "pooled";
    }
    return "unknown";
}

// Task -> server payload for one round. Parameter blocks only.
struct LocalReport {
    std::size_t task_id = 0;
    std::size_t round = 0;      // >= 1
    Vec weights_hat;            // on the simplex
    std::vector<Vec> theta_tilde;
};

// Server -> tasks payload for one round. Parameter blocks only.
struct CentralDirective {
    std::size_t round = 0;
    std::vector<std::vector<Vec>> theta_hat;  // [K][R]
    std::vector<Vec> theta_bar;               // [R]
    double lambda_used = 0.0;
};

using Message = std::variant<LocalReport, CentralDirective>;

// Privacy by construction: the message surface holds parameter vectors only;
// no observation-shaped member (Matrix / TaskDataset) exists, so raw data
// cannot cross the task/server boundary. Compile-time checked here and
// re-asserted in the test suite.
static_assert(std::is_same_v<decltype(LocalReport::weights_hat), Vec>);
static_assert(std::is_same_v<decltype(LocalReport::theta_tilde), std::vector<Vec>>);
static_assert(std::is_same_v<decltype(CentralDirective::theta_hat), std::vector<std::vector<Vec>>>);
static_assert(std::is_same_v<decltype(CentralDirective::theta_bar), std::vector<Vec>>);
static_assert(std::variant_size_v<Message> == 2);

struct FederationState {
    std::size_t round = 0;
    std::vector<MixtureParams> task_params;
    PenaltySchedule schedule;
    Mode mode = Mode::FedGrEM;
    std::vector<Message> log;  // per round: K LocalReports then 1 CentralDirective
};

// One synchronized round. Returns the successor state; any failure leaves the
// input state untouched (rounds are atomic, so lambda never desynchronizes).
inline FederationState fedgrem_round(const FederationState& state,
                                     const std::vector<TaskDataset>& datasets,
                                     const std::vector<StepSizePlan>& plans) {
    const std::size_t K = state.task_params.size();
    if (K == 0 || datasets.size() != K || plans.size() != K)
        throw ContractError("fedgrem_round: task indexing mismatch");
    if (state.mode == Mode::Pooled)
        throw ContractError("fedgrem_round: Pooled mode has no federated rounds");
    const std::size_t round = state.round + 1;
    const bool aggregates = state.mode == Mode::FedGrEM || state.mode == Mode::NaiveAverage;
    const std::size_t n = datasets.front().n();
    const std::size_t R = state.task_params.front().R();
    const std::size_t d = state.task_params.front().dim();
    if (aggregates) {
        for (const TaskDataset& data : datasets)
            if (data.n() != n)
                throw ContractError("fedgrem_round: aggregation requires equal task sizes");
        for (const MixtureParams& p : state.task_params)
            if (p.R() != R || p.dim() != d)
                throw ContractError("fedgrem_round: aggregation requires a shared (R, d)");
    }

    // Local phase: E-step + weight M-step + one gradient ascent step per task.
    std::vector<LocalReport> reports;
    reports.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        MixtureParams local =
            gradient_em_step(datasets[k].kind, state.task_params[k], datasets[k], plans[k]);
        reports.push_back(LocalReport{k, round, std::move(local.weights),
                                      std::move(local.components)});
    }

    // Central phase: one aggregation problem per component index.
    const PenaltySchedule schedule = schedule_next(state.schedule);
    const double lambda = schedule.current;
    CentralDirective directive;
    directive.round = round;
    directive.lambda_used = lambda;
    directive.theta_hat.assign(K, std::vector<Vec>(R));
    directive.theta_bar.resize(R);
    std::vector<Vec> tilde_r(K);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < K; ++k) tilde_r[k] = reports[k].theta_tilde[r];
        switch (state.mode) {
            case Mode::FedGrEM: {
                AggregateResult agg = central_update(tilde_r, lambda, n);
                for (std::size_t k = 0; k < K; ++k)
                    directive.theta_hat[k][r] = std::move(agg.per_task[k]);
                directive.theta_bar[r] = std::move(agg.center);
                break;
            }
            case Mode::NaiveAverage: {
                Vec mean = mean_of(tilde_r);
                for (std::size_t k = 0; k < K; ++k) directive.theta_hat[k][r] = mean;
                directive.theta_bar[r] = std::move(mean);
                break;
            }
            case Mode::LocalOnly: {
                for (std::size_t k = 0; k < K; ++k)
                    directive.theta_hat[k][r] = tilde_r[k];
                directive.theta_bar[r] = mean_of(tilde_r);
                break;
            }
            case Mode::Pooled:
                break;  // unreachable (rejected above)
        }
    }

    // Commit: weights from the reports, components from the directive.
    FederationState next;
    next.round = round;
    next.mode = state.mode;
    next.schedule = schedule;
    next.task_params.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        next.task_params[k].weights = reports[k].weights_hat;
        next.task_params[k].components = directive.theta_hat[k];
    }
    next.log = state.log;
    next.log.reserve(next.log.size() + K + 1);
    for (LocalReport& report : reports) next.log.emplace_back(std::move(report));
    next.log.emplace_back(std::move(directive));
    return next;
}

struct FitResult {
    std::vector<MixtureParams> final_params;                // [K]
    std::vector<std::vector<MixtureParams>> trajectories;   // [K][T+1]
    std::vector<Message> log;
    Vec lambda_by_round;      // lambda used in round t at index t-1
    double lambda_initial = 0.0;  // schedule value before any round
};

// Full fit: optional stepwise relabeling of the inits, then T rounds.
// Pooled mode concatenates the masked-in datasets (default: all) and runs a
// single local trajectory, broadcast to every task slot; evaluation only.
inline FitResult run(Mode mode, const std::vector<TaskDataset>& datasets,
                     const std::vector<MixtureParams>& inits,
                     const std::vector<StepSizePlan>& plans, PenaltySchedule schedule,
                     std::size_t T, bool align_first,
                     const std::vector<char>* pooled_mask = nullptr) {
    const std::size_t K = datasets.size();
    if (K == 0 || inits.size() != K || plans.size() != K)
        throw ContractError("run: task indexing mismatch");
    validate(schedule, "run");

    std::vector<MixtureParams> start = inits;
    if (align_first) {
        std::vector<ComponentList> lists(K);
        for (std::size_t k = 0; k < K; ++k) lists[k] = inits[k].components;
        const PermutationSet perms = align_stepwise(lists, StepwiseMode::Assignment);
        for (std::size_t k = 0; k < K; ++k)
            start[k] = permute_components(inits[k], perms.perms[k]);
    }

    FitResult fit;
    fit.lambda_initial = schedule.current;
    fit.lambda_by_round.reserve(T);

    if (mode == Mode::Pooled) {
        std::vector<char> mask(K, 1);
        if (pooled_mask != nullptr) {
            if (pooled_mask->size() != K)
                throw ContractError("run: pooled mask size mismatch");
            mask = *pooled_mask;
        }
        std::size_t first = K;
        std::size_t total_n = 0;
        for (std::size_t k = 0; k < K; ++k) {
            if (!mask[k]) continue;
            if (first == K) first = k;
            if (datasets[k].kind != datasets[first].kind ||
                datasets[k].dim() != datasets[first].dim())
                throw ContractError("run: pooled datasets must share kind and dimension");
            total_n += datasets[k].n();
        }
        if (first == K) throw ContractError("run: pooled mask selects no task");
        TaskDataset pooled;
        pooled.kind = datasets[first].kind;
        pooled.x = Matrix(total_n, datasets[first].dim());
        if (pooled.kind == ModelKind::MoR) pooled.y.reserve(total_n);
        std::size_t row = 0;
        for (std::size_t k = 0; k < K; ++k) {
            if (!mask[k]) continue;
            for (std::size_t i = 0; i < datasets[k].n(); ++i, ++row)
                for (std::size_t j = 0; j < datasets[k].dim(); ++j)
                    pooled.x(row, j) = datasets[k].x(i, j);
            if (pooled.kind == ModelKind::MoR)
                pooled.y.insert(pooled.y.end(), datasets[k].y.begin(), datasets[k].y.end());
        }
        const LocalTrajectory traj =
            run_local(pooled.kind, pooled, start[first], plans[first], T);
        fit.trajectories.assign(K, traj.params);
        fit.final_params.assign(K, traj.params.back());
        for (std::size_t t = 1; t <= T; ++t) {
            schedule = schedule_next(schedule);
            fit.lambda_by_round.push_back(schedule.current);
        }
        return fit;
    }

    FederationState state;
    state.round = 0;
    state.task_params = std::move(start);
    state.schedule = schedule;
    state.mode = mode;
    fit.trajectories.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        fit.trajectories[k].reserve(T + 1);
        fit.trajectories[k].push_back(state.task_params[k]);
    }
    for (std::size_t t = 1; t <= T; ++t) {
        state = fedgrem_round(state, datasets, plans);
        for (std::size_t k = 0; k < K; ++k)
            fit.trajectories[k].push_back(state.task_params[k]);
        fit.lambda_by_round.push_back(state.schedule.current);
    }
    fit.final_params = std::move(state.task_params);
    fit.log = std::move(state.log);
    return fit;
}

// Per-round diagnostics in the shape the error decomposition predicts:
// max inlier theta error and weight error under one shared relabeling, plus
// the lambda in force. Round 0 reports the schedule's initial value.
struct ProbeRow {
    std::size_t round = 0;
    double err_theta = 0.0;
    double err_w = 0.0;
    double lambda = 0.0;
};

inline std::vector<ProbeRow> error_decomposition_probe(const FitResult& fit,
                                                       const std::vector<MixtureParams>& truths,
                                                       const std::vector<char>& inlier) {
    const std::size_t K = fit.trajectories.size();
    if (truths.size() != K || inlier.size() != K)
        throw ContractError("error_decomposition_probe: task indexing mismatch");
    if (K == 0) throw ContractError("error_decomposition_probe: no tasks");
    std::vector<MixtureParams> est_in, truth_in;
    for (std::size_t k = 0; k < K; ++k)
        if (inlier[k]) truth_in.push_back(truths[k]);
    if (truth_in.empty())
        throw ContractError("error_decomposition_probe: no inlier tasks");
    const std::size_t rounds = fit.trajectories.front().size();
    std::vector<ProbeRow> out;
    out.reserve(rounds);
    for (std::size_t t = 0; t < rounds; ++t) {
        est_in.clear();
        for (std::size_t k = 0; k < K; ++k)
            if (inlier[k]) est_in.push_back(fit.trajectories[k][t]);
        const CommonRelabelError err = common_relabel_error(est_in, truth_in);
        ProbeRow row;
        row.round = t;
        row.err_theta = err.err_theta;
        row.err_w = err.err_w;
        row.lambda = t == 0 ? fit.lambda_initial : fit.lambda_by_round[t - 1];
        out.push_back(row);
    }
    return out;
}

}  // namespace fedgrem
