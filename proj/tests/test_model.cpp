// Mixture model primitives: posteriors, the constant-free surrogate and its
// gradient, M-steps, sampling, and likelihood monitoring.
#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <numbers>

#include "fedgrem/fedgrem.hpp"
#include "test_util.hpp"

using namespace fedgrem;
using testutil::random_dataset;
using testutil::random_params;
using testutil::random_posterior;

namespace {

TaskDataset gmm_points(const std::vector<Vec>& rows) {
    TaskDataset data;
    data.kind = ModelKind::GMM;
    data.x = Matrix(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) data.x(i, j) = rows[i][j];
    return data;
}

MixtureParams params_1d(const Vec& weights, const Vec& centers) {
    MixtureParams p;
    p.weights = weights;
    p.components.resize(centers.size());
    for (std::size_t r = 0; r < centers.size(); ++r) p.components[r] = {centers[r]};
    return p;
}

double std_normal_pdf(double t) {
    return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

PosteriorMatrix posterior_rows(const std::vector<Vec>& rows) {
    PosteriorMatrix post;
    post.values = Matrix(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t r = 0; r < rows[i].size(); ++r) post.values(i, r) = rows[i][r];
    return post;
}

}  // namespace

TEST_CASE("posterior: symmetric two-component GMM splits evenly") {
    const MixtureParams p = params_1d({0.5, 0.5}, {1.0, -1.0});
    const PosteriorMatrix post = posterior(ModelKind::GMM, p, gmm_points({{0.0}}));
    CHECK(post.values(0, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(post.values(0, 1) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("posterior: identical components return the priors") {
    const MixtureParams p = params_1d({0.3, 0.7}, {1.25, 1.25});
    const PosteriorMatrix post =
        posterior(ModelKind::GMM, p, gmm_points({{0.0}, {5.0}, {-2.0}}));
    for (std::size_t i = 0; i < post.n(); ++i) {
        CHECK(post.values(i, 0) == Catch::Approx(0.3).margin(1e-14));
        CHECK(post.values(i, 1) == Catch::Approx(0.7).margin(1e-14));
    }
}

TEST_CASE("posterior: matches the direct density-ratio oracle") {
    const MixtureParams p = params_1d({0.3, 0.7}, {0.0, 2.0});
    const PosteriorMatrix post = posterior(ModelKind::GMM, p, gmm_points({{1.5}}));
    const double a = 0.3 * std_normal_pdf(1.5);
    const double b = 0.7 * std_normal_pdf(-0.5);
    CHECK(post.values(0, 0) == Catch::Approx(a / (a + b)).epsilon(1e-12));
    CHECK(post.values(0, 1) == Catch::Approx(b / (a + b)).epsilon(1e-12));
    // Frozen regression values for the same instance.
    CHECK(post.values(0, 0) == Catch::Approx(0.1361904714221882).epsilon(1e-14));
    CHECK(post.values(0, 1) == Catch::Approx(0.8638095285778118).epsilon(1e-14));
}

TEST_CASE("posterior: symmetric MoR instance splits evenly") {
    TaskDataset data;
    data.kind = ModelKind::MoR;
    data.x = Matrix(1, 1);
    data.x(0, 0) = 1.0;
    data.y = {0.0};
    const MixtureParams p = params_1d({0.5, 0.5}, {1.0, -1.0});
    const PosteriorMatrix post = posterior(ModelKind::MoR, p, data);
    CHECK(post.values(0, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(post.values(0, 1) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("posterior: dimension mismatch and non-finite logits are rejected") {
    const MixtureParams p = params_1d({0.5, 0.5}, {1.0, -1.0});
    SplitMix64 rng(1);
    const TaskDataset wrong = random_dataset(rng, ModelKind::GMM, 3, 2);
    CHECK_THROWS_AS(posterior(ModelKind::GMM, p, wrong), ContractError);
    CHECK_THROWS_AS(posterior(ModelKind::MoR, p, gmm_points({{0.0}})), ContractError);

    MixtureParams huge = params_1d({0.5, 0.5}, {1e308, -1e308});
    try {
        posterior(ModelKind::GMM, huge, gmm_points({{1e300}, {0.0}}));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("row 0") != std::string::npos);
    }
}

TEST_CASE("posterior: choice of reference component is immaterial") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t R = 2 + rng.below(3);
        const std::size_t d = 1 + rng.below(4);
        const ModelKind kind = trial % 2 == 0 ? ModelKind::GMM : ModelKind::MoR;
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, kind, 8, d);
        for (std::size_t ref = 1; ref < R; ++ref) {
            const PosteriorMatrix a = posterior(kind, p, data);
            Matrix logits = posterior_logits(kind, p, data, ref);
            // Normalize the alternative-reference logits the same way.
            for (std::size_t i = 0; i < logits.rows(); ++i) {
                double mx = logits(i, 0);
                for (std::size_t r = 1; r < R; ++r) mx = std::max(mx, logits(i, r));
                double z = 0.0;
                for (std::size_t r = 0; r < R; ++r) z += std::exp(logits(i, r) - mx);
                for (std::size_t r = 0; r < R; ++r)
                    CHECK(std::exp(logits(i, r) - mx) / z ==
                          Catch::Approx(a.values(i, r)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("posterior: rows are on the simplex for random instances") {
    SplitMix64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t R = 1 + rng.below(4);
        const std::size_t d = 1 + rng.below(4);
        const ModelKind kind = trial % 2 == 0 ? ModelKind::GMM : ModelKind::MoR;
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, kind, 6, d);
        const PosteriorMatrix post = posterior(kind, p, data);
        validate(post, "test");  // entries in [0,1], rows sum to 1 +- 1e-10
    }
}

TEST_CASE("q_hat_value: zero residual and pure quadratic forms") {
    const MixtureParams p = params_1d({0.5, 0.5}, {2.0, -1.0});
    const PosteriorMatrix post = posterior_rows({{1.0, 0.0}});
    CHECK(q_hat_value(ModelKind::GMM, p, post, gmm_points({{2.0}})) == 0.0);
    const double v = 0.75;
    CHECK(q_hat_value(ModelKind::GMM, p, post, gmm_points({{2.0 + v}})) ==
          Catch::Approx(-0.5 * v * v).epsilon(1e-14));
}

TEST_CASE("q_hat_value: matches direct summation on random MoR instances") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t R = 1 + rng.below(3);
        const std::size_t d = 1 + rng.below(3);
        const std::size_t n = 4 + rng.below(12);
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, ModelKind::MoR, n, d);
        const PosteriorMatrix post = random_posterior(rng, n, R);
        double oracle = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < R; ++r) {
                double pred = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    pred += data.x(i, j) * p.components[r][j];
                const double res = data.y[i] - pred;
                oracle += post.values(i, r) * res * res;
            }
        oracle *= -0.5 / static_cast<double>(n);
        CHECK(q_hat_value(ModelKind::MoR, p, post, data) ==
              Catch::Approx(oracle).margin(1e-12));
    }
}

TEST_CASE("q_hat_gradient: stationary at responsibility-weighted means") {
    const PosteriorMatrix post = posterior_rows({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
    const TaskDataset data = gmm_points({{1.0, 0.0}, {3.0, 2.0}, {5.0, 5.0}});
    MixtureParams p;
    p.weights = {2.0 / 3.0, 1.0 / 3.0};
    p.components = {{2.0, 1.0}, {5.0, 5.0}};
    const std::vector<Vec> grad = q_hat_gradient(ModelKind::GMM, p, post, data);
    for (const Vec& g : grad)
        for (double v : g) CHECK(v == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("q_hat_gradient: single-point displacement comes back exactly") {
    MixtureParams p;
    p.weights = {0.5, 0.5};
    p.components = {{1.0, -2.0}, {0.0, 0.0}};
    const Vec v = {0.3, -0.8};
    const TaskDataset data = gmm_points({{1.0 + v[0], -2.0 + v[1]}});
    const PosteriorMatrix post = posterior_rows({{1.0, 0.0}});
    const std::vector<Vec> grad = q_hat_gradient(ModelKind::GMM, p, post, data);
    CHECK(grad[0][0] == Catch::Approx(v[0]).epsilon(1e-14));
    CHECK(grad[0][1] == Catch::Approx(v[1]).epsilon(1e-14));
    CHECK(norm(grad[1]) == 0.0);
}

TEST_CASE("q_hat_gradient: agrees with central finite differences") {
    SplitMix64 rng(19);
    for (int trial = 0; trial < 30; ++trial) {
        const ModelKind kind = trial % 2 == 0 ? ModelKind::GMM : ModelKind::MoR;
        const std::size_t d = 3, R = 2, n = 20;
        MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, kind, n, d);
        const PosteriorMatrix post = random_posterior(rng, n, R);
        const std::vector<Vec> grad = q_hat_gradient(kind, p, post, data);
        const double step = 1e-6;
        double num = 0.0, den = 0.0;
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t j = 0; j < d; ++j) {
                MixtureParams lo = p, hi = p;
                lo.components[r][j] -= step;
                hi.components[r][j] += step;
                const double fd = (q_hat_value(kind, hi, post, data) -
                                   q_hat_value(kind, lo, post, data)) /
                                  (2.0 * step);
                num += (fd - grad[r][j]) * (fd - grad[r][j]);
                den += fd * fd;
            }
        CHECK(std::sqrt(num) <= 1e-5 * std::max(1.0, std::sqrt(den)));
    }
}

TEST_CASE("GMM ascent: a step with eta <= 1/w never decreases the surrogate") {
    SplitMix64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng.below(3);
        const std::size_t R = 1 + rng.below(3);
        const std::size_t n = 5 + rng.below(20);
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, ModelKind::GMM, n, d);
        const PosteriorMatrix post = posterior(ModelKind::GMM, p, data);
        const Vec w = weight_m_step(post);
        const std::vector<Vec> grad = q_hat_gradient(ModelKind::GMM, p, post, data);
        MixtureParams stepped = p;
        for (std::size_t r = 0; r < R; ++r)
            axpy(rng.uniform01() / w[r], grad[r], stepped.components[r]);
        CHECK(q_hat_value(ModelKind::GMM, stepped, post, data) >=
              q_hat_value(ModelKind::GMM, p, post, data) - 1e-12);
    }
}

TEST_CASE("weight_m_step: column means land on the simplex") {
    const std::size_t R = 3;
    PosteriorMatrix uniform = posterior_rows(
        {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
    const Vec wu = weight_m_step(uniform);
    for (std::size_t r = 0; r < R; ++r) CHECK(wu[r] == Catch::Approx(1.0 / 3).margin(1e-15));

    const Vec hard = weight_m_step(
        posterior_rows({{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}));
    CHECK(hard[0] == 0.75);
    CHECK(hard[1] == 0.25);

    const Vec soft = weight_m_step(posterior_rows({{0.9, 0.1}, {0.4, 0.6}}));
    CHECK(soft[0] == Catch::Approx(0.65).margin(1e-15));
    CHECK(soft[1] == Catch::Approx(0.35).margin(1e-15));
}

TEST_CASE("exact_m_step_gmm: weighted means and degenerate columns") {
    const TaskDataset data = gmm_points({{1.0, 1.0}, {3.0, 5.0}, {10.0, -2.0}});
    const std::vector<Vec> hard =
        exact_m_step_gmm(posterior_rows({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}), data);
    CHECK(hard[0][0] == 2.0);
    CHECK(hard[0][1] == 3.0);
    CHECK(hard[1][0] == 10.0);
    CHECK(hard[1][1] == -2.0);

    const std::vector<Vec> uni = exact_m_step_gmm(
        posterior_rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}), data);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(uni[r][0] == Catch::Approx(14.0 / 3.0).epsilon(1e-15));
        CHECK(uni[r][1] == Catch::Approx(4.0 / 3.0).epsilon(1e-15));
    }

    SplitMix64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 10, d = 2, R = 3;
        const TaskDataset rd = random_dataset(rng, ModelKind::GMM, n, d);
        const PosteriorMatrix post = random_posterior(rng, n, R);
        const std::vector<Vec> got = exact_m_step_gmm(post, rd);
        for (std::size_t r = 0; r < R; ++r) {
            double mass = 0.0;
            Vec acc(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                mass += post.values(i, r);
                for (std::size_t j = 0; j < d; ++j)
                    acc[j] += post.values(i, r) * rd.x(i, j);
            }
            for (std::size_t j = 0; j < d; ++j)
                CHECK(got[r][j] == Catch::Approx(acc[j] / mass).margin(1e-12));
        }
    }

    try {
        exact_m_step_gmm(posterior_rows({{1.0, 0.0}, {1.0, 0.0}}),
                         gmm_points({{0.0}, {1.0}}));
        FAIL("expected DegenerateClusterError");
    } catch (const DegenerateClusterError& e) {
        CHECK(std::string(e.what()).find("component 1") != std::string::npos);
    }
}

TEST_CASE("exact_m_step_gmm: dominates any single gradient step") {
    SplitMix64 rng(37);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 12, d = 2, R = 2;
        const TaskDataset data = random_dataset(rng, ModelKind::GMM, n, d);
        const PosteriorMatrix post = random_posterior(rng, n, R);
        MixtureParams p = random_params(rng, R, d);
        MixtureParams exact = p;
        exact.components = exact_m_step_gmm(post, data);
        const std::vector<Vec> grad = q_hat_gradient(ModelKind::GMM, p, post, data);
        MixtureParams stepped = p;
        for (std::size_t r = 0; r < R; ++r)
            axpy(rng.uniform(0.0, 3.0), grad[r], stepped.components[r]);
        CHECK(q_hat_value(ModelKind::GMM, exact, post, data) >=
              q_hat_value(ModelKind::GMM, stepped, post, data) - 1e-12);
    }
}

TEST_CASE("sample: preconditions and law-of-large-numbers checks") {
    SplitMix64 rng(41);
    MixtureParams p;
    p.weights = {1.0, 0.0};
    CHECK_THROWS_AS(validate(p, "test"), ContractError);  // zero weight rejected

    MixtureParams lone;
    lone.weights = {1.0};
    lone.components = {{2.0, -3.0, 0.5}};
    CHECK_THROWS_AS(sample(ModelKind::GMM, lone, 0, rng), ContractError);

    const TaskDataset big = sample(ModelKind::GMM, lone, 100000, rng);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < big.n(); ++i) mean += big.x(i, j);
        mean /= static_cast<double>(big.n());
        CHECK(std::abs(mean - lone.components[0][j]) < 0.02);
    }

    MixtureParams mor;
    mor.weights = {1.0};
    mor.components = {{1.5, -0.7}};
    const std::size_t n = 4000;
    const TaskDataset reg = sample(ModelKind::MoR, mor, n, rng);
    // OLS on (x, y): theta_hat = (X^T X)^{-1} X^T y, d=2.
    double xtx[2][2] = {{0, 0}, {0, 0}};
    double xty[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t b = 0; b < 2; ++b) xtx[a][b] += reg.x(i, a) * reg.x(i, b);
            xty[a] += reg.x(i, a) * reg.y[i];
        }
    }
    const double det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
    const double t0 = (xtx[1][1] * xty[0] - xtx[0][1] * xty[1]) / det;
    const double t1 = (xtx[0][0] * xty[1] - xtx[1][0] * xty[0]) / det;
    const double tol = 3.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(t0 - 1.5) < tol);
    CHECK(std::abs(t1 + 0.7) < tol);
}

TEST_CASE("sample_with_labels: labels match the drawing stream of sample") {
    SplitMix64 rng_a(43), rng_b(43);
    MixtureParams p;
    p.weights = {0.25, 0.75};
    p.components = {{-4.0}, {4.0}};
    const TaskDataset plain = sample(ModelKind::GMM, p, 200, rng_a);
    const auto [data, labels] = sample_with_labels(ModelKind::GMM, p, 200, rng_b);
    CHECK(plain == data);
    REQUIRE(labels.size() == 200);
    for (std::size_t i = 0; i < 200; ++i) {
        // At separation 8 the drawn point sits on its own component's side.
        CHECK(labels[i] == (data.x(i, 0) > 0.0 ? 1u : 0u));
    }
}

TEST_CASE("log_likelihood: pinned value, invariance, density oracle") {
    MixtureParams lone;
    lone.weights = {1.0};
    lone.components = {{0.7}};
    CHECK(log_likelihood(ModelKind::GMM, lone, gmm_points({{0.7}})) ==
          Catch::Approx(-0.9189385332046727).epsilon(1e-15));

    SplitMix64 rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t R = 2 + rng.below(2);
        const std::size_t d = 1 + rng.below(3);
        const std::size_t n = 5 + rng.below(10);
        const ModelKind kind = trial % 2 == 0 ? ModelKind::GMM : ModelKind::MoR;
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, kind, n, d);
        const double base = log_likelihood(kind, p, data);

        const fedgrem::Perm perm = testutil::random_perm(rng, R);
        CHECK(log_likelihood(kind, permute_components(p, perm), data) ==
              Catch::Approx(base).margin(1e-12));

        // Direct-density oracle.
        double oracle = 0.0;
        const double log2pi = std::log(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < n; ++i) {
            double mix = 0.0;
            double xsq = 0.0;
            for (std::size_t j = 0; j < d; ++j) xsq += data.x(i, j) * data.x(i, j);
            for (std::size_t r = 0; r < R; ++r) {
                if (kind == ModelKind::GMM) {
                    double dsq = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double diff = data.x(i, j) - p.components[r][j];
                        dsq += diff * diff;
                    }
                    mix += p.weights[r] *
                           std::exp(-0.5 * dsq - 0.5 * static_cast<double>(d) * log2pi);
                } else {
                    double pred = 0.0;
                    for (std::size_t j = 0; j < d; ++j)
                        pred += data.x(i, j) * p.components[r][j];
                    const double res = data.y[i] - pred;
                    mix += p.weights[r] *
                           std::exp(-0.5 * res * res - 0.5 * log2pi - 0.5 * xsq -
                                    0.5 * static_cast<double>(d) * log2pi);
                }
            }
            oracle += std::log(mix);
        }
        oracle /= static_cast<double>(n);
        CHECK(base == Catch::Approx(oracle).margin(1e-12));
    }
}

TEST_CASE("permutation invariance: posterior and surrogate move with the labels") {
    SplitMix64 rng(53);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t R = 2 + rng.below(3);
        const std::size_t d = 1 + rng.below(3);
        const std::size_t n = 4 + rng.below(8);
        const ModelKind kind = trial % 2 == 0 ? ModelKind::GMM : ModelKind::MoR;
        const MixtureParams p = random_params(rng, R, d);
        const TaskDataset data = random_dataset(rng, kind, n, d);
        const fedgrem::Perm perm = testutil::random_perm(rng, R);
        const MixtureParams q = permute_components(p, perm);

        const PosteriorMatrix post_p = posterior(kind, p, data);
        const PosteriorMatrix post_q = posterior(kind, q, data);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < R; ++r)
                CHECK(post_q.values(i, r) ==
                      Catch::Approx(post_p.values(i, perm[r])).margin(1e-12));

        PosteriorMatrix post_p_permuted;
        post_p_permuted.values = Matrix(n, R);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < R; ++r)
                post_p_permuted.values(i, r) = post_p.values(i, perm[r]);
        CHECK(q_hat_value(kind, q, post_p_permuted, data) ==
              Catch::Approx(q_hat_value(kind, p, post_p, data)).margin(1e-12));
    }
}
