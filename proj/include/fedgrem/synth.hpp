// Synthetic benchmark generation: shared separated centers with per-task
// perturbations bounded by the similarity radius h, heterogeneous Dirichlet
// proportions with an exact weight floor, adversarial task contamination, and
// a columnar text format for dataset replay.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedgrem/align.hpp"
#include "fedgrem/model.hpp"
#include "fedgrem/rng.hpp"
#include "fedgrem/types.hpp"
#include "fedgrem/vecmath.hpp"

namespace fedgrem {

struct TaskGenSpec {
    ModelKind kind = ModelKind::GMM;
    std::size_t K = 1;   // tasks
    std::size_t n = 100; // observations per task
    std::size_t d = 1;   // dimension
    std::size_t R = 2;   // components
    double delta = 1.0;  // minimum pairwise center separation
    double h = 0.0;      // similarity radius of per-task perturbations
    double c_w = 0.5;    // weight floor coefficient: min weight >= c_w / R
    double M = 10.0;     // center norm bound
    double dirichlet_alpha = 1.0;
};

inline void validate(const TaskGenSpec& spec, const char* where) {
    if (spec.K < 1 || spec.n < 1 || spec.d < 1 || spec.R < 1)
        throw ContractError(std::string(where) + ": counts must be >= 1");
    if (!(spec.M > 0.0)) throw ContractError(std::string(where) + ": M must be > 0");
    if (spec.delta < 0.0 || spec.delta > 2.0 * spec.M)
        throw ContractError(std::string(where) + ": need 0 <= delta <= 2M for placement");
    if (spec.h < 0.0) throw ContractError(std::string(where) + ": h must be >= 0");
    if (!(spec.c_w > 0.0) || spec.c_w > 1.0)
        throw ContractError(std::string(where) + ": c_w must lie in (0, 1]");
    if (!(spec.c_w / static_cast<double>(spec.R) < 1.0))
        throw ContractError(std::string(where) + ": c_w / R must be < 1");
    if (!(spec.dirichlet_alpha > 0.0))
        throw ContractError(std::string(where) + ": dirichlet_alpha must be > 0");
}

struct CenterSet {
    std::vector<Vec> base;                  // [R] shared centers
    std::vector<std::vector<Vec>> per_task; // [K][R] perturbed copies
};

// Base centers: rejection sampling until the minimum pairwise distance reaches
// delta. The first 5000 attempts draw volume-uniform in the M-ball; the rest
// draw uniform on the M-sphere so near-boundary separations (delta close to
// 2M) stay reachable without losing rotational symmetry. Per-task copies add
// uniform ball noise of radius h (h = 0 consumes no draws).
inline CenterSet gen_centers(const TaskGenSpec& spec, SplitMix64& rng) {
    validate(spec, "gen_centers");
    constexpr int kBudget = 10000;
    constexpr int kVolumePhase = 5000;
    CenterSet out;
    bool placed = false;
    for (int attempt = 0; attempt < kBudget && !placed; ++attempt) {
        out.base.clear();
        for (std::size_t r = 0; r < spec.R; ++r)
            out.base.push_back(attempt < kVolumePhase ? rng.ball_uniform(spec.d, spec.M)
                                                      : rng.sphere_uniform(spec.d, spec.M));
        placed = true;
        for (std::size_t a = 0; a < spec.R && placed; ++a)
            for (std::size_t b = a + 1; b < spec.R; ++b)
                if (dist(out.base[a], out.base[b]) < spec.delta) {
                    placed = false;
                    break;
                }
    }
    if (!placed) {
        std::ostringstream msg;
        msg << "gen_centers: no placement with delta=" << spec.delta << " M=" << spec.M
            << " R=" << spec.R << " d=" << spec.d << " within " << kBudget << " attempts";
        throw InfeasibleError(msg.str());
    }
    out.per_task.assign(spec.K, out.base);
    if (spec.h > 0.0) {
        for (std::size_t k = 0; k < spec.K; ++k)
            for (std::size_t r = 0; r < spec.R; ++r)
                axpy(1.0, rng.ball_uniform(spec.d, spec.h), out.per_task[k][r]);
    }
    return out;
}

// Per-task proportions: Dirichlet(alpha) mixed with the uniform vector,
// w = (1 - c_w) * w_dir + c_w * (1/R, ..., 1/R), so min weight >= c_w / R
// holds exactly by construction.
inline std::vector<Vec> gen_weights(const TaskGenSpec& spec, SplitMix64& rng) {
    validate(spec, "gen_weights");
    std::vector<Vec> out(spec.K);
    const double uniform = 1.0 / static_cast<double>(spec.R);
    for (std::size_t k = 0; k < spec.K; ++k) {
        const Vec dir = rng.dirichlet(spec.R, spec.dirichlet_alpha);
        out[k].resize(spec.R);
        for (std::size_t r = 0; r < spec.R; ++r)
            out[k][r] = (1.0 - spec.c_w) * dir[r] + spec.c_w * uniform;
    }
    return out;
}

struct GeneratedTasks {
    std::vector<TaskDataset> datasets;
    std::vector<MixtureParams> truths;
    std::vector<char> inlier;  // all true at generation time
};

// Deterministic generation under the documented stream contract:
// centers from derive_seed(seed, 0, kStreamCenters), weights from
// derive_seed(seed, 0, kStreamWeights), task k's sample from
// derive_seed(seed, k, kStreamData).
inline GeneratedTasks gen_tasks(const TaskGenSpec& spec, std::uint64_t seed) {
    validate(spec, "gen_tasks");
    SplitMix64 rng_centers(derive_seed(seed, 0, kStreamCenters));
    SplitMix64 rng_weights(derive_seed(seed, 0, kStreamWeights));
    const CenterSet centers = gen_centers(spec, rng_centers);
    const std::vector<Vec> weights = gen_weights(spec, rng_weights);
    GeneratedTasks out;
    out.datasets.reserve(spec.K);
    out.truths.reserve(spec.K);
    out.inlier.assign(spec.K, 1);
    for (std::size_t k = 0; k < spec.K; ++k) {
        MixtureParams truth;
        truth.weights = weights[k];
        truth.components = centers.per_task[k];
        SplitMix64 rng_data(derive_seed(seed, k, kStreamData));
        out.datasets.push_back(sample(spec.kind, truth, spec.n, rng_data));
        out.truths.push_back(std::move(truth));
    }
    return out;
}

// Concrete adversaries for the contaminated-task set. `param` is the scale of
// GaussianNoise, the value of PointMass, and the offset of ShiftedCopy;
// MeanFlip and ClusterSwapped ignore it.
enum class Attack { GaussianNoise, MeanFlip, PointMass, ClusterSwapped, ShiftedCopy };

inline const char* attack_name(Attack a) {
    switch (a) {
        case Attack::GaussianNoise: return "gaussiannoise";
        case Attack::MeanFlip: return "meanflip";
        case Attack::PointMass: return "pointmass";
        case Attack::ClusterSwapped: return "clusterswapped";
        case Attack::ShiftedCopy: return "shiftedcopy";
    }
    return "unknown";
}

enum class Placement { Random, LastBlock, FirstBlock };

inline const char* placement_name(Placement p) {
    switch (p) {
        case Placement::Random: return "random";
        case Placement::LastBlock: return "lastblock";
        case Placement::FirstBlock: return "firstblock";
    }
    return "unknown";
}

struct ContaminationSpec {
    double epsilon = 0.0;  // outlier fraction in [0, 1); floor(epsilon*K) tasks
    Attack attack = Attack::GaussianNoise;
    double param = 1.0;
    Placement placement = Placement::Random;
};

inline void validate(const ContaminationSpec& spec, const char* where) {
    if (!(spec.epsilon >= 0.0) || spec.epsilon >= 1.0)
        throw ContractError(std::string(where) + ": epsilon must lie in [0, 1)");
}

// Replaces floor(epsilon*K) task datasets in place and clears their inlier
// flags; truths and inlier datasets are never touched. Outliers are processed
// in ascending task order with the single rng, so results are deterministic.
inline void apply_contamination(GeneratedTasks& tasks, const ContaminationSpec& spec,
                                SplitMix64& rng) {
    validate(spec, "apply_contamination");
    const std::size_t K = tasks.datasets.size();
    if (tasks.truths.size() != K || tasks.inlier.size() != K)
        throw ContractError("apply_contamination: task indexing mismatch");
    const std::size_t m = static_cast<std::size_t>(
        std::floor(spec.epsilon * static_cast<double>(K) + 1e-9));
    if (m == 0) return;
    std::vector<std::size_t> outliers;
    switch (spec.placement) {
        case Placement::Random: {
            std::vector<std::size_t> order(K);
            for (std::size_t k = 0; k < K; ++k) order[k] = k;
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t pick = k + static_cast<std::size_t>(rng.below(K - k));
                std::swap(order[k], order[pick]);
            }
            outliers.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
            std::sort(outliers.begin(), outliers.end());
            break;
        }
        case Placement::LastBlock:
            for (std::size_t k = K - m; k < K; ++k) outliers.push_back(k);
            break;
        case Placement::FirstBlock:
            for (std::size_t k = 0; k < m; ++k) outliers.push_back(k);
            break;
    }
    for (const std::size_t k : outliers) {
        TaskDataset& data = tasks.datasets[k];
        const MixtureParams& truth = tasks.truths[k];
        const std::size_t n = data.n();
        const std::size_t d = data.dim();
        switch (spec.attack) {
            case Attack::GaussianNoise: {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j)
                        data.x(i, j) = spec.param * rng.normal();
                    if (data.kind == ModelKind::MoR) data.y[i] = spec.param * rng.normal();
                }
                break;
            }
            case Attack::MeanFlip: {
                MixtureParams flipped = truth;
                for (Vec& c : flipped.components)
                    for (double& v : c) v = -v;
                data = sample(data.kind, flipped, n, rng);
                break;
            }
            case Attack::PointMass: {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) data.x(i, j) = spec.param;
                    if (data.kind == ModelKind::MoR) data.y[i] = spec.param;
                }
                break;
            }
            case Attack::ClusterSwapped: {
                const std::size_t R = truth.R();
                if (R < 2)
                    throw ContractError("apply_contamination: ClusterSwapped needs R >= 2");
                Perm sigma;
                do {
                    sigma = identity_perm(R);
                    for (std::size_t r = 0; r + 1 < R; ++r) {
                        const std::size_t pick =
                            r + static_cast<std::size_t>(rng.below(R - r));
                        std::swap(sigma[r], sigma[pick]);
                    }
                } while (sigma == identity_perm(R));
                // Centers permuted against unpermuted weights; permuting both
                // would reproduce the original distribution.
                MixtureParams swapped = truth;
                for (std::size_t r = 0; r < R; ++r)
                    swapped.components[r] = truth.components[sigma[r]];
                data = sample(data.kind, swapped, n, rng);
                break;
            }
            case Attack::ShiftedCopy: {
                for (double& v : data.x.data()) v += spec.param;
                for (double& v : data.y) v += spec.param;
                break;
            }
        }
        tasks.inlier[k] = 0;
    }
}

// Columnar text format. Header line "kind,n,d,R"; then n comma-separated rows
// (d values for GMM, d+1 for MoR with the response last). Doubles use %.17g,
// so write/read round-trips are exact.
namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const TaskDataset& data, std::size_t R) {
    validate(data, "write_dataset");
    os << model_kind_name(data.kind) << ',' << data.n() << ',' << data.dim() << ',' << R
       << '\n';
    for (std::size_t i = 0; i < data.n(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j) {
            if (j > 0) os << ',';
            os << detail::format_double(data.x(i, j));
        }
        if (data.kind == ModelKind::MoR) os << ',' << detail::format_double(data.y[i]);
        os << '\n';
    }
}

inline std::pair<TaskDataset, std::size_t> read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("read_dataset: missing header");
    std::istringstream header(line);
    std::string kind_token, field;
    if (!std::getline(header, kind_token, ','))
        throw ConfigError("read_dataset: malformed header");
    ModelKind kind;
    if (kind_token == "gmm")
        kind = ModelKind::GMM;
    else if (kind_token == "mor")
        kind = ModelKind::MoR;
    else
        throw ConfigError("read_dataset: unknown kind '" + kind_token + "'");
    std::size_t n = 0, d = 0, R = 0;
    for (std::size_t* target : {&n, &d, &R}) {
        if (!std::getline(header, field, ','))
            throw ConfigError("read_dataset: malformed header");
        try {
            *target = static_cast<std::size_t>(std::stoull(field));
        } catch (const std::exception&) {
            throw ConfigError("read_dataset: non-numeric header field '" + field + "'");
        }
    }
    if (n < 1 || d < 1 || R < 1) throw ConfigError("read_dataset: invalid header counts");
    TaskDataset data;
    data.kind = kind;
    data.x = Matrix(n, d);
    if (kind == ModelKind::MoR) data.y.resize(n);
    const std::size_t cols = kind == ModelKind::MoR ? d + 1 : d;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line))
            throw ConfigError("read_dataset: truncated after " + std::to_string(i) + " rows");
        std::istringstream row(line);
        for (std::size_t j = 0; j < cols; ++j) {
            if (!std::getline(row, field, ','))
                throw ConfigError("read_dataset: short row " + std::to_string(i));
            char* end = nullptr;
            const double v = std::strtod(field.c_str(), &end);
            if (end == field.c_str() || *end != '\0')
                throw ConfigError("read_dataset: bad value '" + field + "' in row " +
                                  std::to_string(i));
            if (j < d)
                data.x(i, j) = v;
            else
                data.y[i] = v;
        }
        if (std::getline(row, field, ','))
            throw ConfigError("read_dataset: extra column in row " + std::to_string(i));
    }
    validate(data, "read_dataset");
    return {std::move(data), R};
}

inline void write_dataset_file(const std::string& path, const TaskDataset& data,
                               std::size_t R) {
    std::ofstream os(path);
    if (!os) throw ConfigError("write_dataset: cannot open " + path);
    write_dataset(os, data, R);
}

inline std::pair<TaskDataset, std::size_t> read_dataset_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("read_dataset: cannot open " + path);
    return read_dataset(is);
}

}  // namespace fedgrem
