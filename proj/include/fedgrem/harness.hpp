// Experiment harness: one config describes generation, contamination,
// initialization, stepping, the penalty schedule, and the training mode.
// Repeats derive independent seeds from a master seed, metrics come out as
// flat rows, sweeps expand to a cartesian grid, and a worker pool runs
// (cell, repeat) units into preassigned slots so output bytes never depend
// on the thread count.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedgrem/federation.hpp"
#include "fedgrem/synth.hpp"

namespace fedgrem {

struct PenaltyConfig {
    double c_lambda0 = 1.0;
    double decay = 0.5;
    double c_floor = 0.3;
    double delta_conf = 0.05;
};

struct ExperimentConfig {
    TaskGenSpec task;
    ContaminationSpec contamination;
    InitStrategy init = InitStrategy::oracle_perturb(0.0, 0.0);
    StepRule step_rule;
    PenaltyConfig penalty;
    Mode mode = Mode::FedGrEM;
    std::size_t T = 20;
    bool align_first = false;
    std::uint64_t master_seed = 0;
    std::size_t repeats = 1;
    bool timing = false;        // leave runtime_ms at 0 unless set, for byte-stable output
    bool per_task_iota = false; // diagnostic: per-task relabeling instead of a shared one
};

struct MetricsRow {
    std::uint64_t seed = 0;  // per-repeat derived seed
    std::size_t n = 0, d = 0, K = 0, R = 0;
    double h = 0.0, epsilon = 0.0;
    Attack attack = Attack::GaussianNoise;
    Mode method = Mode::FedGrEM;
    std::size_t round = 0;
    double err_theta = 0.0, err_w = 0.0, lambda = 0.0, runtime_ms = 0.0;
};

// Shared-relabeling estimation error across tasks; delegates to the
// enumeration with its R <= 8 guard.
inline CommonRelabelError estimation_error(const std::vector<MixtureParams>& estimates,
                                           const std::vector<MixtureParams>& truths) {
    return common_relabel_error(estimates, truths);
}

// OLS slope of log(err) on log(n). Needs at least three points with positive
// coordinates; a slope near -1/2 matches a 1/sqrt(n) error decay.
inline double rate_slope(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) throw ContractError("rate_slope: need at least 3 points");
    double mx = 0.0, my = 0.0;
    std::vector<double> xs(points.size()), ys(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!(points[i].first > 0.0) || !(points[i].second > 0.0))
            throw ContractError("rate_slope: points must have positive n and err");
        xs[i] = std::log(points[i].first);
        ys[i] = std::log(points[i].second);
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(points.size());
    my /= static_cast<double>(points.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (!(sxx > 0.0)) throw ContractError("rate_slope: sample sizes must not all coincide");
    return sxy / sxx;
}

namespace detail {

// Rethrows the in-flight exception with a seed/stage prefix, preserving the
// concrete type so exit-code mapping still works downstream.
[[noreturn]] inline void rethrow_with_context(const std::string& prefix) {
    try {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const CapacityError& e) {
        throw CapacityError(prefix + e.what());
    } catch (const InfeasibleError& e) {
        throw InfeasibleError(prefix + e.what());
    } catch (const DegenerateClusterError& e) {
        throw DegenerateClusterError(prefix + e.what());
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(prefix + e.what(), e.last_iterate, e.grad_norm);
    } catch (const ContractError& e) {
        throw ContractError(prefix + e.what());
    }
}

template <typename F>
auto run_stage(const char* stage, std::uint64_t seed, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (...) {
        std::ostringstream prefix;
        prefix << "[seed=" << seed << " stage=" << stage << "] ";
        rethrow_with_context(prefix.str());
    }
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg, const char* where) {
    validate(cfg.task, where);
    validate(cfg.contamination, where);
    // repeats == 0 is allowed and yields no rows.
    if (!(cfg.penalty.delta_conf > 0.0) || !(cfg.penalty.delta_conf < 1.0))
        throw ContractError(std::string(where) + ": delta_conf must lie in (0, 1)");
    if (!(cfg.penalty.decay > 0.0) || !(cfg.penalty.decay < 1.0))
        throw ContractError(std::string(where) + ": decay must lie in (0, 1)");
    if (cfg.penalty.c_lambda0 < 0.0 || cfg.penalty.c_floor < 0.0)
        throw ContractError(std::string(where) + ": penalty coefficients must be >= 0");
}

// One repeat end to end: generate, contaminate, initialize, fit, measure.
// Any failure is rethrown tagged with the derived seed and the stage name.
inline std::vector<MetricsRow> run_repeat(const ExperimentConfig& cfg, std::size_t repeat) {
    validate(cfg, "run_repeat");
    const std::uint64_t rep_seed = derive_seed(cfg.master_seed, repeat, kStreamRepeat);
    const auto t_start = std::chrono::steady_clock::now();

    GeneratedTasks tasks = detail::run_stage("generate", rep_seed, [&] {
        return gen_tasks(cfg.task, rep_seed);
    });
    detail::run_stage("contaminate", rep_seed, [&] {
        SplitMix64 rng(derive_seed(rep_seed, 0, kStreamContamination));
        apply_contamination(tasks, cfg.contamination, rng);
        return 0;
    });

    const std::size_t K = cfg.task.K;
    std::vector<MixtureParams> inits(K);
    std::vector<StepSizePlan> plans(K);
    detail::run_stage("initialize", rep_seed, [&] {
        for (std::size_t k = 0; k < K; ++k) {
            SplitMix64 rng(derive_seed(rep_seed, k, kStreamInit));
            inits[k] =
                initialize(cfg.init, cfg.task.kind, tasks.datasets[k], &tasks.truths[k], rng);
            plans[k] = make_step_plan(cfg.step_rule, inits[k].weights);
        }
        return 0;
    });

    const FitResult fit = detail::run_stage("fit", rep_seed, [&] {
        const PenaltySchedule schedule = default_schedule(
            cfg.task.n, cfg.task.d, cfg.task.R, K, cfg.penalty.delta_conf,
            cfg.penalty.c_lambda0, cfg.penalty.c_floor, cfg.penalty.decay);
        return run(cfg.mode, tasks.datasets, inits, plans, schedule, cfg.T, cfg.align_first,
                   &tasks.inlier);
    });

    std::vector<MetricsRow> rows = detail::run_stage("metrics", rep_seed, [&] {
        std::vector<ProbeRow> probe;
        if (cfg.per_task_iota) {
            // Lenient diagnostic: each inlier task gets its own best matching,
            // so label consensus failures do not show up in err_theta.
            const std::size_t rounds = fit.trajectories.front().size();
            for (std::size_t t = 0; t < rounds; ++t) {
                ProbeRow row;
                row.round = t;
                bool any = false;
                for (std::size_t k = 0; k < K; ++k) {
                    if (!tasks.inlier[k]) continue;
                    any = true;
                    const MixtureParams& est = fit.trajectories[k][t];
                    const auto [perm, dists] =
                        best_permutation_match(est.components, tasks.truths[k].components);
                    for (std::size_t r = 0; r < dists.size(); ++r) {
                        row.err_theta = std::max(row.err_theta, dists[r]);
                        row.err_w = std::max(
                            row.err_w,
                            std::abs(est.weights[perm[r]] - tasks.truths[k].weights[r]));
                    }
                }
                if (!any) throw ContractError("run_repeat: no inlier tasks");
                row.lambda = t == 0 ? fit.lambda_initial : fit.lambda_by_round[t - 1];
                probe.push_back(row);
            }
        } else {
            probe = error_decomposition_probe(fit, tasks.truths, tasks.inlier);
        }
        std::vector<MetricsRow> out;
        out.reserve(probe.size());
        for (const ProbeRow& p : probe) {
            MetricsRow row;
            row.seed = rep_seed;
            row.n = cfg.task.n;
            row.d = cfg.task.d;
            row.K = K;
            row.R = cfg.task.R;
            row.h = cfg.task.h;
            row.epsilon = cfg.contamination.epsilon;
            row.attack = cfg.contamination.attack;
            row.method = cfg.mode;
            row.round = p.round;
            row.err_theta = p.err_theta;
            row.err_w = p.err_w;
            row.lambda = p.lambda;
            out.push_back(row);
        }
        return out;
    });

    if (cfg.timing) {
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t_start)
                              .count();
        for (MetricsRow& row : rows) row.runtime_ms = ms;
    }
    return rows;
}

inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg) {
    validate(cfg, "run_experiment");
    std::vector<MetricsRow> rows;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        std::vector<MetricsRow> part = run_repeat(cfg, rep);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

// Deterministic parallel driver: work units are (cell, repeat) pairs in
// cell-major order, each writing into its own slot; concatenation order and
// therefore output bytes are independent of the thread count. The first
// failing unit in schedule order wins error reporting.
inline std::vector<MetricsRow> run_cells(const std::vector<ExperimentConfig>& cells,
                                         std::size_t threads) {
    struct Unit {
        std::size_t cell;
        std::size_t repeat;
    };
    std::vector<Unit> units;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        validate(cells[c], "run_cells");
        for (std::size_t rep = 0; rep < cells[c].repeats; ++rep) units.push_back({c, rep});
    }
    std::vector<std::vector<MetricsRow>> slots(units.size());
    std::vector<std::exception_ptr> failures(units.size());
    std::atomic<std::size_t> cursor{0};
    const auto worker = [&] {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= units.size()) return;
            try {
                slots[i] = run_repeat(cells[units[i].cell], units[i].repeat);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const std::size_t howmany =
        std::max<std::size_t>(1, std::min(threads, units.size()));
    if (howmany == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(howmany);
        for (std::size_t i = 0; i < howmany; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& failure : failures)
        if (failure) std::rethrow_exception(failure);
    std::vector<MetricsRow> rows;
    for (const std::vector<MetricsRow>& slot : slots)
        rows.insert(rows.end(), slot.begin(), slot.end());
    return rows;
}

// Flat rows in a fixed schema; doubles as %.17g so replay comparisons can be
// byte-exact.
inline constexpr const char* kMetricsCsvHeader =
    "seed,n,d,K,R,h,epsilon,attack,method,round,err_theta,err_w,lambda,runtime_ms";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << kMetricsCsvHeader << '\n';
    for (const MetricsRow& r : rows) {
        os << r.seed << ',' << r.n << ',' << r.d << ',' << r.K << ',' << r.R << ','
           << detail::format_double(r.h) << ',' << detail::format_double(r.epsilon) << ','
           << attack_name(r.attack) << ',' << mode_name(r.method) << ',' << r.round << ','
           << detail::format_double(r.err_theta) << ',' << detail::format_double(r.err_w)
           << ',' << detail::format_double(r.lambda) << ','
           << detail::format_double(r.runtime_ms) << '\n';
    }
}

inline void write_metrics_jsonl(std::ostream& os, const std::vector<MetricsRow>& rows) {
    for (const MetricsRow& r : rows) {
        os << "{\"seed\":" << r.seed << ",\"n\":" << r.n << ",\"d\":" << r.d
           << ",\"K\":" << r.K << ",\"R\":" << r.R << ",\"h\":" << detail::format_double(r.h)
           << ",\"epsilon\":" << detail::format_double(r.epsilon) << ",\"attack\":\""
           << attack_name(r.attack) << "\",\"method\":\"" << mode_name(r.method)
           << "\",\"round\":" << r.round
           << ",\"err_theta\":" << detail::format_double(r.err_theta)
           << ",\"err_w\":" << detail::format_double(r.err_w)
           << ",\"lambda\":" << detail::format_double(r.lambda)
           << ",\"runtime_ms\":" << detail::format_double(r.runtime_ms) << "}\n";
    }
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline double parse_config_double(const std::string& value, const std::string& ctx) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(ctx + ": not a number: '" + value + "'");
    return v;
}

inline std::uint64_t parse_config_u64(const std::string& value, const std::string& ctx) {
    if (value.empty() || value[0] == '-')
        throw ConfigError(ctx + ": not a nonnegative integer: '" + value + "'");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(ctx + ": not a nonnegative integer: '" + value + "'");
    return static_cast<std::uint64_t>(v);
}

inline bool parse_config_bool(const std::string& value, const std::string& ctx) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(ctx + ": not a boolean: '" + value + "'");
}

inline ModelKind parse_model_kind(const std::string& value, const std::string& ctx) {
    if (value == "gmm") return ModelKind::GMM;
    if (value == "mor") return ModelKind::MoR;
    throw ConfigError(ctx + ": unknown kind '" + value + "' (gmm, mor)");
}

inline Attack parse_attack(const std::string& value, const std::string& ctx) {
    if (value == "gaussiannoise") return Attack::GaussianNoise;
    if (value == "meanflip") return Attack::MeanFlip;
    if (value == "pointmass") return Attack::PointMass;
    if (value == "clusterswapped") return Attack::ClusterSwapped;
    if (value == "shiftedcopy") return Attack::ShiftedCopy;
    throw ConfigError(ctx + ": unknown attack '" + value + "'");
}

inline Placement parse_placement(const std::string& value, const std::string& ctx) {
    if (value == "random") return Placement::Random;
    if (value == "lastblock") return Placement::LastBlock;
    if (value == "firstblock") return Placement::FirstBlock;
    throw ConfigError(ctx + ": unknown placement '" + value + "'");
}

inline Mode parse_mode(const std::string& value, const std::string& ctx) {
    if (value == "fedgrem") return Mode::FedGrEM;
    if (value == "naiveaverage") return Mode::NaiveAverage;
    if (value == "localonly") return Mode::LocalOnly;
    if (value == "pooled") return Mode::Pooled;
    throw ConfigError(ctx + ": unknown mode '" + value + "'");
}

}  // namespace detail

// One sweep axis: a recognized scalar key and the literal values to grid over.
struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

struct ParsedConfig {
    ExperimentConfig base;
    std::vector<SweepAxis> axes;
    bool auto_corollary = false;  // step rule "corollary": resolve by model kind
};

namespace detail {

// Applies one sweep-eligible setting; shared by the base parser and the sweep
// expander so a swept value can never mean something different from the same
// key in its home section.
inline void apply_axis(ExperimentConfig& cfg, const std::string& key,
                       const std::string& value, const std::string& ctx) {
    if (key == "n")
        cfg.task.n = static_cast<std::size_t>(parse_config_u64(value, ctx));
    else if (key == "epsilon")
        cfg.contamination.epsilon = parse_config_double(value, ctx);
    else if (key == "h")
        cfg.task.h = parse_config_double(value, ctx);
    else if (key == "c_lambda0")
        cfg.penalty.c_lambda0 = parse_config_double(value, ctx);
    else if (key == "c_floor")
        cfg.penalty.c_floor = parse_config_double(value, ctx);
    else if (key == "delta")
        cfg.task.delta = parse_config_double(value, ctx);
    else if (key == "k")
        cfg.task.K = static_cast<std::size_t>(parse_config_u64(value, ctx));
    else if (key == "d")
        cfg.task.d = static_cast<std::size_t>(parse_config_u64(value, ctx));
    else if (key == "t")
        cfg.T = static_cast<std::size_t>(parse_config_u64(value, ctx));
    else if (key == "mode")
        cfg.mode = parse_mode(value, ctx);
    else
        throw ConfigError(ctx + ": unknown sweep key '" + key + "'");
}

}  // namespace detail

// Flat key=value format with [section] headers and # comments. Unknown
// sections or keys are rejected outright so a typo cannot silently fall back
// to a default.
inline ParsedConfig parse_config_text(const std::string& text) {
    ParsedConfig parsed;
    ExperimentConfig& cfg = parsed.base;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::string ctx = "config line " + std::to_string(lineno);
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(ctx + ": unterminated section header");
            section = t.substr(1, t.size() - 2);
            if (section != "task" && section != "contamination" && section != "init" &&
                section != "step" && section != "penalty" && section != "run" &&
                section != "sweep")
                throw ConfigError(ctx + ": unknown section '" + section + "'");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(ctx + ": expected key=value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(ctx + ": empty key or value");
        if (section.empty()) throw ConfigError(ctx + ": key before any [section]");

        if (section == "task") {
            if (key == "kind")
                cfg.task.kind = detail::parse_model_kind(value, ctx);
            else if (key == "k")
                cfg.task.K = static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else if (key == "n")
                cfg.task.n = static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else if (key == "d")
                cfg.task.d = static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else if (key == "r")
                cfg.task.R = static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else if (key == "delta")
                cfg.task.delta = detail::parse_config_double(value, ctx);
            else if (key == "h")
                cfg.task.h = detail::parse_config_double(value, ctx);
            else if (key == "c_w")
                cfg.task.c_w = detail::parse_config_double(value, ctx);
            else if (key == "m")
                cfg.task.M = detail::parse_config_double(value, ctx);
            else if (key == "dirichlet_alpha")
                cfg.task.dirichlet_alpha = detail::parse_config_double(value, ctx);
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [task]");
        } else if (section == "contamination") {
            if (key == "epsilon")
                cfg.contamination.epsilon = detail::parse_config_double(value, ctx);
            else if (key == "attack")
                cfg.contamination.attack = detail::parse_attack(value, ctx);
            else if (key == "param")
                cfg.contamination.param = detail::parse_config_double(value, ctx);
            else if (key == "placement")
                cfg.contamination.placement = detail::parse_placement(value, ctx);
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [contamination]");
        } else if (section == "init") {
            if (key == "strategy") {
                if (value == "oracleperturb")
                    cfg.init.kind = InitStrategy::Kind::OraclePerturb;
                else if (value == "kmeans")
                    cfg.init.kind = InitStrategy::Kind::KMeansLloyd;
                else if (value == "randomrestarts")
                    cfg.init.kind = InitStrategy::Kind::RandomRestarts;
                else
                    throw ConfigError(ctx + ": unknown strategy '" + value + "'");
            } else if (key == "delta_w")
                cfg.init.delta_w = detail::parse_config_double(value, ctx);
            else if (key == "delta_theta")
                cfg.init.delta_theta = detail::parse_config_double(value, ctx);
            else if (key == "restarts")
                cfg.init.restarts =
                    static_cast<int>(detail::parse_config_u64(value, ctx));
            else if (key == "iters")
                cfg.init.iters = static_cast<int>(detail::parse_config_u64(value, ctx));
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [init]");
        } else if (section == "step") {
            if (key == "rule") {
                parsed.auto_corollary = false;
                if (value == "corollary")
                    parsed.auto_corollary = true;
                else if (value == "corollary_gmm")
                    cfg.step_rule.kind = StepRule::Kind::CorollaryGMM;
                else if (value == "corollary_mor")
                    cfg.step_rule.kind = StepRule::Kind::CorollaryMoR;
                else if (value == "fixed")
                    cfg.step_rule.kind = StepRule::Kind::Fixed;
                else if (value == "backtracking")
                    cfg.step_rule.kind = StepRule::Kind::Backtracking;
                else
                    throw ConfigError(ctx + ": unknown rule '" + value + "'");
            } else if (key == "c_b")
                cfg.step_rule.c_b = detail::parse_config_double(value, ctx);
            else if (key == "eta")
                cfg.step_rule.eta = detail::parse_config_double(value, ctx);
            else if (key == "eta0")
                cfg.step_rule.eta0 = detail::parse_config_double(value, ctx);
            else if (key == "halvings_max")
                cfg.step_rule.halvings_max =
                    static_cast<int>(detail::parse_config_u64(value, ctx));
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [step]");
        } else if (section == "penalty") {
            if (key == "c_lambda0")
                cfg.penalty.c_lambda0 = detail::parse_config_double(value, ctx);
            else if (key == "decay")
                cfg.penalty.decay = detail::parse_config_double(value, ctx);
            else if (key == "c_floor")
                cfg.penalty.c_floor = detail::parse_config_double(value, ctx);
            else if (key == "delta_conf")
                cfg.penalty.delta_conf = detail::parse_config_double(value, ctx);
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [penalty]");
        } else if (section == "run") {
            if (key == "mode")
                cfg.mode = detail::parse_mode(value, ctx);
            else if (key == "t")
                cfg.T = static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else if (key == "align_first")
                cfg.align_first = detail::parse_config_bool(value, ctx);
            else if (key == "master_seed")
                cfg.master_seed = detail::parse_config_u64(value, ctx);
            else if (key == "repeats")
                cfg.repeats =
                    static_cast<std::size_t>(detail::parse_config_u64(value, ctx));
            else
                throw ConfigError(ctx + ": unknown key '" + key + "' in [run]");
        } else {  // sweep
            SweepAxis axis;
            axis.key = key;
            std::istringstream vs(value);
            std::string item;
            while (std::getline(vs, item, ',')) {
                const std::string v = detail::trim(item);
                if (v.empty()) throw ConfigError(ctx + ": empty sweep value");
                axis.values.push_back(v);
            }
            if (axis.values.empty()) throw ConfigError(ctx + ": empty sweep axis");
            // Dry-run the parse so bad values fail at config time, not mid-run.
            for (const std::string& v : axis.values) {
                ExperimentConfig probe = cfg;
                detail::apply_axis(probe, key, v, ctx);
            }
            parsed.axes.push_back(std::move(axis));
        }
    }

    if (parsed.auto_corollary)
        cfg.step_rule.kind = cfg.task.kind == ModelKind::GMM ? StepRule::Kind::CorollaryGMM
                                                             : StepRule::Kind::CorollaryMoR;
    if (cfg.init.kind != InitStrategy::Kind::OraclePerturb && cfg.init.R == 0)
        cfg.init.R = cfg.task.R;
    try {
        validate(cfg, "config");
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return parsed;
}

inline ParsedConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

// Cartesian expansion in declaration order: the first axis varies slowest.
// Every cell is validated so an infeasible grid corner fails before any work
// starts.
inline std::vector<ExperimentConfig> expand_sweep(const ParsedConfig& parsed) {
    std::vector<ExperimentConfig> cells{parsed.base};
    for (const SweepAxis& axis : parsed.axes) {
        std::vector<ExperimentConfig> next;
        next.reserve(cells.size() * axis.values.size());
        for (const ExperimentConfig& cell : cells)
            for (const std::string& value : axis.values) {
                ExperimentConfig expanded = cell;
                detail::apply_axis(expanded, axis.key, value,
                                   "sweep axis '" + axis.key + "'");
                next.push_back(std::move(expanded));
            }
        cells = std::move(next);
    }
    for (const ExperimentConfig& cell : cells) {
        try {
            validate(cell, "sweep cell");
        } catch (const ContractError& e) {
            throw ConfigError(e.what());
        }
    }
    return cells;
}

// Reads rows written by write_metrics_csv; the header must match exactly.
inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || detail::trim(line) != kMetricsCsvHeader)
        throw ConfigError("metrics csv: missing or mismatched header");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const std::string ctx = "metrics csv line " + std::to_string(lineno);
        std::vector<std::string> fields;
        std::istringstream fs(line);
        std::string field;
        while (std::getline(fs, field, ',')) fields.push_back(field);
        if (fields.size() != 14) throw ConfigError(ctx + ": expected 14 fields");
        MetricsRow r;
        r.seed = detail::parse_config_u64(fields[0], ctx);
        r.n = static_cast<std::size_t>(detail::parse_config_u64(fields[1], ctx));
        r.d = static_cast<std::size_t>(detail::parse_config_u64(fields[2], ctx));
        r.K = static_cast<std::size_t>(detail::parse_config_u64(fields[3], ctx));
        r.R = static_cast<std::size_t>(detail::parse_config_u64(fields[4], ctx));
        r.h = detail::parse_config_double(fields[5], ctx);
        r.epsilon = detail::parse_config_double(fields[6], ctx);
        r.attack = detail::parse_attack(fields[7], ctx);
        r.method = detail::parse_mode(fields[8], ctx);
        r.round = static_cast<std::size_t>(detail::parse_config_u64(fields[9], ctx));
        r.err_theta = detail::parse_config_double(fields[10], ctx);
        r.err_w = detail::parse_config_double(fields[11], ctx);
        r.lambda = detail::parse_config_double(fields[12], ctx);
        r.runtime_ms = detail::parse_config_double(fields[13], ctx);
        rows.push_back(r);
    }
    return rows;
}

inline double median_of(std::vector<double> values) {
    if (values.empty()) throw ContractError("median_of: empty");
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

// Per-method convergence-rate summary from raw metric rows: for each method
// and sample size, take every seed's final-round theta error, reduce to the
// median, and fit the log-log slope when at least three sample sizes survive.
struct SlopeSummary {
    Mode method = Mode::FedGrEM;
    std::vector<std::pair<double, double>> curve;  // (n, median final err_theta)
    std::optional<double> slope;
};

inline std::vector<SlopeSummary> slope_by_method(const std::vector<MetricsRow>& rows) {
    // method -> n -> seed -> (round, err) with the latest round kept.
    std::map<Mode, std::map<std::size_t, std::map<std::uint64_t, MetricsRow>>> latest;
    for (const MetricsRow& row : rows) {
        auto& slot = latest[row.method][row.n];
        const auto it = slot.find(row.seed);
        if (it == slot.end() || row.round > it->second.round) slot[row.seed] = row;
    }
    std::vector<SlopeSummary> out;
    for (const auto& [method, by_n] : latest) {
        SlopeSummary summary;
        summary.method = method;
        for (const auto& [n, by_seed] : by_n) {
            std::vector<double> errs;
            for (const auto& [seed, row] : by_seed) errs.push_back(row.err_theta);
            summary.curve.emplace_back(static_cast<double>(n), median_of(errs));
        }
        std::vector<std::pair<double, double>> positive;
        for (const auto& point : summary.curve)
            if (point.second > 0.0) positive.push_back(point);
        if (positive.size() >= 3) summary.slope = rate_slope(positive);
        out.push_back(std::move(summary));
    }
    return out;
}

}  // namespace fedgrem
