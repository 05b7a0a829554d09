// Command-line simulator around the federated gradient-EM library.
// Subcommands: simulate (one config), sweep (cartesian grid), align-demo
// (label alignment walkthrough), gen (write datasets to disk), slopes
// (convergence-rate fit from a metrics CSV).
//
// Exit codes: 0 success, 2 configuration/usage error, 4 infeasible
// generation, 3 any other failure (numeric, convergence, contract).
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedgrem/fedgrem.hpp"

namespace {

struct IoOptions {
    std::string config_path;
    std::string out_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 1;
    std::string format = "csv";
    bool timing = false;
    bool per_task_iota = false;
};

void emit_rows(const std::vector<fedgrem::MetricsRow>& rows, const IoOptions& opts) {
    std::ostringstream buf;
    if (opts.format == "csv")
        fedgrem::write_metrics_csv(buf, rows);
    else
        fedgrem::write_metrics_jsonl(buf, rows);
    if (opts.out_path.empty()) {
        std::cout << buf.str();
        return;
    }
    std::ofstream os(opts.out_path);
    if (!os) throw fedgrem::ConfigError("cannot open output file " + opts.out_path);
    os << buf.str();
}

int run_simulate_or_sweep(const IoOptions& opts, bool sweep) {
    fedgrem::ParsedConfig parsed = fedgrem::parse_config_file(opts.config_path);
    if (!sweep && !parsed.axes.empty())
        throw fedgrem::ConfigError(
            "simulate: config declares [sweep] axes; use the sweep subcommand");
    if (opts.seed_set) parsed.base.master_seed = opts.seed;
    parsed.base.timing = opts.timing;
    parsed.base.per_task_iota = opts.per_task_iota;
    const std::vector<fedgrem::ExperimentConfig> cells =
        sweep ? fedgrem::expand_sweep(parsed)
              : std::vector<fedgrem::ExperimentConfig>{parsed.base};
    for (const fedgrem::ExperimentConfig& cell : cells) {
        if (cell.mode == fedgrem::Mode::FedGrEM &&
            cell.contamination.epsilon >= 1.0 / 3.0) {
            std::fprintf(stderr,
                         "warning: epsilon=%g is at or above the 1/3 outlier "
                         "tolerance; robustness guarantees do not apply\n",
                         cell.contamination.epsilon);
            break;
        }
    }
    emit_rows(fedgrem::run_cells(cells, opts.threads), opts);
    return 0;
}

std::string perm_to_string(const fedgrem::Perm& p) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i > 0) os << ' ';
        os << p[i];
    }
    os << ']';
    return os.str();
}

// Builds one instance, plants a random relabeling on every task's estimate,
// and shows what each aligner recovers and at what score.
int run_align_demo(const IoOptions& opts) {
    fedgrem::ParsedConfig parsed = fedgrem::parse_config_file(opts.config_path);
    fedgrem::ExperimentConfig cfg = parsed.base;
    if (opts.seed_set) cfg.master_seed = opts.seed;
    const std::uint64_t rep_seed =
        fedgrem::derive_seed(cfg.master_seed, 0, fedgrem::kStreamRepeat);
    fedgrem::GeneratedTasks tasks = fedgrem::gen_tasks(cfg.task, rep_seed);
    {
        fedgrem::SplitMix64 rng(
            fedgrem::derive_seed(rep_seed, 0, fedgrem::kStreamContamination));
        fedgrem::apply_contamination(tasks, cfg.contamination, rng);
    }
    const std::size_t K = cfg.task.K;
    const std::size_t R = cfg.task.R;
    std::vector<fedgrem::MixtureParams> estimates(K);
    for (std::size_t k = 0; k < K; ++k) {
        fedgrem::SplitMix64 rng(fedgrem::derive_seed(rep_seed, k, fedgrem::kStreamInit));
        estimates[k] = fedgrem::initialize(cfg.init, cfg.task.kind, tasks.datasets[k],
                                           &tasks.truths[k], rng);
    }
    // Demo-only stream id, outside the reserved set.
    fedgrem::SplitMix64 plant_rng(fedgrem::derive_seed(rep_seed, 0, 100));
    std::vector<fedgrem::Perm> planted(K);
    for (std::size_t k = 0; k < K; ++k) {
        // The initializer may already label components arbitrarily (kmeans
        // does); fold that pre-existing matching into the recovery target so
        // "matches planted" stays meaningful for every init strategy.
        const auto [pre, pre_dists] = fedgrem::best_permutation_match(
            estimates[k].components, tasks.truths[k].components);
        fedgrem::Perm sigma = fedgrem::identity_perm(R);
        for (std::size_t r = 0; r + 1 < R; ++r) {
            const std::size_t pick = r + static_cast<std::size_t>(plant_rng.below(R - r));
            std::swap(sigma[r], sigma[pick]);
        }
        estimates[k] = fedgrem::permute_components(estimates[k], sigma);
        // estimates[k][inverse(sigma)[pre[r]]] now sits nearest truth r.
        planted[k] = fedgrem::compose(fedgrem::inverse(sigma), pre);
    }

    std::vector<fedgrem::ComponentList> lists(K);
    for (std::size_t k = 0; k < K; ++k) lists[k] = estimates[k].components;

    std::printf("align-demo: K=%zu R=%zu d=%zu delta=%g h=%g epsilon=%g seed=%llu\n", K, R,
                cfg.task.d, cfg.task.delta, cfg.task.h, cfg.contamination.epsilon,
                static_cast<unsigned long long>(cfg.master_seed));
    for (std::size_t k = 0; k < K; ++k)
        std::printf("  task %zu planted recovery target %s%s\n", k,
                    perm_to_string(planted[k]).c_str(), tasks.inlier[k] ? "" : " (outlier)");
    {
        fedgrem::PermutationSet id;
        id.perms.assign(K, fedgrem::identity_perm(R));
        std::printf("identity score: %.17g\n", fedgrem::score(id, lists, K));
    }

    const auto report = [&](const char* name, const fedgrem::PermutationSet& perms) {
        std::printf("%s: score %.17g\n", name, fedgrem::score(perms, lists, K));
        for (std::size_t k = 0; k < K; ++k)
            std::printf("  task %zu -> %s\n", k, perm_to_string(perms.perms[k]).c_str());
        fedgrem::PermutationSet planted_set;
        planted_set.perms = planted;
        const bool ok = fedgrem::equal_up_to_common_relabel(perms, planted_set, tasks.inlier);
        std::printf("  matches planted relabeling on inlier tasks: %s\n", ok ? "yes" : "no");
    };
    try {
        report("exhaustive", fedgrem::align_exhaustive(lists));
    } catch (const fedgrem::CapacityError& e) {
        std::printf("exhaustive: skipped (%s)\n", e.what());
    }
    try {
        report("stepwise-enumerate",
               fedgrem::align_stepwise(lists, fedgrem::StepwiseMode::Enumerate));
    } catch (const fedgrem::CapacityError& e) {
        std::printf("stepwise-enumerate: skipped (%s)\n", e.what());
    }
    report("stepwise-assignment",
           fedgrem::align_stepwise(lists, fedgrem::StepwiseMode::Assignment));
    return 0;
}

int run_gen(const IoOptions& opts) {
    fedgrem::ParsedConfig parsed = fedgrem::parse_config_file(opts.config_path);
    fedgrem::ExperimentConfig cfg = parsed.base;
    if (opts.seed_set) cfg.master_seed = opts.seed;
    const std::uint64_t rep_seed =
        fedgrem::derive_seed(cfg.master_seed, 0, fedgrem::kStreamRepeat);
    fedgrem::GeneratedTasks tasks = fedgrem::gen_tasks(cfg.task, rep_seed);
    {
        fedgrem::SplitMix64 rng(
            fedgrem::derive_seed(rep_seed, 0, fedgrem::kStreamContamination));
        fedgrem::apply_contamination(tasks, cfg.contamination, rng);
    }
    const std::size_t K = cfg.task.K;
    for (std::size_t k = 0; k < K; ++k)
        fedgrem::write_dataset_file(opts.out_path + "_task" + std::to_string(k) + ".txt",
                                    tasks.datasets[k], cfg.task.R);
    const std::string truth_path = opts.out_path + "_truths.txt";
    std::ofstream os(truth_path);
    if (!os) throw fedgrem::ConfigError("cannot open output file " + truth_path);
    os << K << ',' << cfg.task.R << ',' << cfg.task.d << '\n';
    for (std::size_t k = 0; k < K; ++k) {
        os << "task," << k << ',' << int(tasks.inlier[k]) << '\n';
        const fedgrem::MixtureParams& truth = tasks.truths[k];
        for (std::size_t r = 0; r < truth.R(); ++r) {
            if (r > 0) os << ',';
            os << fedgrem::detail::format_double(truth.weights[r]);
        }
        os << '\n';
        for (std::size_t r = 0; r < truth.R(); ++r) {
            for (std::size_t j = 0; j < truth.dim(); ++j) {
                if (j > 0) os << ',';
                os << fedgrem::detail::format_double(truth.components[r][j]);
            }
            os << '\n';
        }
    }
    std::printf("wrote %zu task datasets and %s with prefix %s\n", K, truth_path.c_str(),
                opts.out_path.c_str());
    return 0;
}

int run_slopes(const std::string& input_path, const std::string& out_prefix) {
    std::ifstream is(input_path);
    if (!is) throw fedgrem::ConfigError("cannot open metrics file " + input_path);
    const std::vector<fedgrem::MetricsRow> rows = fedgrem::read_metrics_csv(is);
    if (rows.empty()) throw fedgrem::ConfigError("slopes: no rows in " + input_path);
    const std::vector<fedgrem::SlopeSummary> summaries = fedgrem::slope_by_method(rows);
    for (const fedgrem::SlopeSummary& s : summaries) {
        if (s.slope)
            std::printf("method=%s points=%zu slope=%.17g\n", fedgrem::mode_name(s.method),
                        s.curve.size(), *s.slope);
        else
            std::printf("method=%s points=%zu slope=na\n", fedgrem::mode_name(s.method),
                        s.curve.size());
        if (!out_prefix.empty()) {
            const std::string path =
                out_prefix + "_" + fedgrem::mode_name(s.method) + ".dat";
            std::ofstream os(path);
            if (!os) throw fedgrem::ConfigError("cannot open output file " + path);
            for (const auto& [n, err] : s.curve)
                os << fedgrem::detail::format_double(n) << ' '
                   << fedgrem::detail::format_double(err) << '\n';
        }
    }
    return 0;
}

void add_io_options(CLI::App* cmd, IoOptions& opts, bool with_run_flags) {
    cmd->add_option("--config", opts.config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "override master_seed from the config");
    if (with_run_flags) {
        cmd->add_option("--out", opts.out_path, "output file (default stdout)");
        cmd->add_option("--threads", opts.threads, "worker threads (default 1)")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--format", opts.format, "output format (default csv)")
            ->check(CLI::IsMember({"csv", "jsonl"}));
        cmd->add_flag("--timing", opts.timing,
                      "fill runtime_ms (off by default to keep output byte-stable)");
        cmd->add_flag("--per-task-iota", opts.per_task_iota,
                      "per-task relabeling metric instead of a shared one");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated gradient-EM simulator"};
    app.require_subcommand(1);

    IoOptions sim_opts, sweep_opts, demo_opts, gen_opts;
    std::string slopes_input, slopes_out;

    CLI::App* sim = app.add_subcommand("simulate", "run one experiment config");
    add_io_options(sim, sim_opts, true);
    CLI::App* sweep = app.add_subcommand("sweep", "run the cartesian sweep grid");
    add_io_options(sweep, sweep_opts, true);
    CLI::App* demo = app.add_subcommand("align-demo", "label alignment walkthrough");
    add_io_options(demo, demo_opts, false);
    CLI::App* gen = app.add_subcommand("gen", "generate datasets to files");
    add_io_options(gen, gen_opts, false);
    gen->add_option("--out", gen_opts.out_path, "output path prefix")->required();
    CLI::App* slopes = app.add_subcommand("slopes", "fit log-log error slopes from a CSV");
    slopes->add_option("input", slopes_input, "metrics CSV file")
        ->required()
        ->check(CLI::ExistingFile);
    slopes->add_option("--out", slopes_out, "per-method curve file prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    sim_opts.seed_set = sim->count("--seed") > 0;
    sweep_opts.seed_set = sweep->count("--seed") > 0;
    demo_opts.seed_set = demo->count("--seed") > 0;
    gen_opts.seed_set = gen->count("--seed") > 0;

    try {
        if (sim->parsed()) return run_simulate_or_sweep(sim_opts, false);
        if (sweep->parsed()) return run_simulate_or_sweep(sweep_opts, true);
        if (demo->parsed()) return run_align_demo(demo_opts);
        if (gen->parsed()) return run_gen(gen_opts);
        if (slopes->parsed()) return run_slopes(slopes_input, slopes_out);
    } catch (const fedgrem::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const fedgrem::InfeasibleError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
