// Core value types and error taxonomy shared by every fedgrem layer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedgrem {

using Vec = std::vector<double>;

// Precondition violations: caller passed structurally invalid arguments.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite intermediate where the algorithm requires finiteness.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A mixture component lost all posterior mass; restart policy is the caller's.
struct DegenerateClusterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Problem size exceeds a documented combinatorial guard.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Generation constraints cannot be met within the sampling budget.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed configuration file or invalid configured value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative solver exhausted its iteration budget; carries the last iterate.
struct ConvergenceError : std::runtime_error {
    Vec last_iterate;
    double grad_norm;
    ConvergenceError(const std::string& msg, Vec iterate, double gnorm)
        : std::runtime_error(msg), last_iterate(std::move(iterate)), grad_norm(gnorm) {}
};

enum class ModelKind { GMM, MoR };

inline const char* model_kind_name(ModelKind kind) {
    return kind == ModelKind::GMM ? "gmm" : "mor";
}

// Dense row-major matrix; the only array shape the library needs.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Mixture weights plus one parameter vector per component.
// Invariants: weights sum to 1 within 1e-12, all weights > 0, all component
// vectors share one dimension, every entry finite.
struct MixtureParams {
    Vec weights;
    std::vector<Vec> components;

    std::size_t R() const { return weights.size(); }
    std::size_t dim() const { return components.empty() ? 0 : components.front().size(); }

    bool operator==(const MixtureParams& other) const = default;
};

inline void validate(const MixtureParams& p, const char* where) {
    if (p.weights.empty() || p.components.size() != p.weights.size())
        throw ContractError(std::string(where) + ": weights/components size mismatch");
    double sum = 0.0;
    for (double w : p.weights) {
        if (!(w > 0.0) || !std::isfinite(w))
            throw ContractError(std::string(where) + ": weights must be positive and finite");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ContractError(std::string(where) + ": weights must sum to 1 within 1e-12");
    const std::size_t d = p.components.front().size();
    for (const Vec& c : p.components) {
        if (c.size() != d)
            throw ContractError(std::string(where) + ": component dimension mismatch");
        for (double v : c)
            if (!std::isfinite(v))
                throw ContractError(std::string(where) + ": non-finite component entry");
    }
    if (d == 0) throw ContractError(std::string(where) + ": zero-dimensional components");
}

// One task's sample. GMM: rows of x only. MoR: rows of x plus a response per row.
struct TaskDataset {
    ModelKind kind = ModelKind::GMM;
    Matrix x;  // n x d observations
    Vec y;     // length n, MoR only (empty for GMM)

    std::size_t n() const { return x.rows(); }
    std::size_t dim() const { return x.cols(); }

    bool operator==(const TaskDataset& other) const = default;
};

inline void validate(const TaskDataset& data, const char* where) {
    if (data.n() < 1 || data.dim() < 1)
        throw ContractError(std::string(where) + ": dataset needs n >= 1 and d >= 1");
    for (double v : data.x.data())
        if (!std::isfinite(v))
            throw ContractError(std::string(where) + ": non-finite observation");
    if (data.kind == ModelKind::MoR) {
        if (data.y.size() != data.n())
            throw ContractError(std::string(where) + ": MoR needs one response per row");
        for (double v : data.y)
            if (!std::isfinite(v))
                throw ContractError(std::string(where) + ": non-finite response");
    } else if (!data.y.empty()) {
        throw ContractError(std::string(where) + ": GMM dataset must not carry responses");
    }
}

// Per-observation component responsibilities; each row lies on the simplex
// (entries in [0,1], row sum 1 within 1e-10).
struct PosteriorMatrix {
    Matrix values;  // n x R

    std::size_t n() const { return values.rows(); }
    std::size_t R() const { return values.cols(); }
};

inline void validate(const PosteriorMatrix& post, const char* where) {
    if (post.n() < 1 || post.R() < 1)
        throw ContractError(std::string(where) + ": empty posterior");
    for (std::size_t i = 0; i < post.n(); ++i) {
        double sum = 0.0;
        for (double v : post.values.row(i)) {
            if (!(v >= 0.0) || !(v <= 1.0))
                throw ContractError(std::string(where) + ": posterior entry outside [0,1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-10)
            throw ContractError(std::string(where) + ": posterior row must sum to 1");
    }
}

}  // namespace fedgrem
