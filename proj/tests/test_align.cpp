// Label alignment: permutation algebra, the pairwise score, exhaustive and
// stepwise aligners against brute-force oracles, and relabeling metrics.
#include "catch2/catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedgrem/fedgrem.hpp"
#include "test_util.hpp"

using namespace fedgrem;

namespace {

std::vector<ComponentList> random_estimates(SplitMix64& rng, std::size_t K,
                                            std::size_t R, std::size_t d) {
    std::vector<ComponentList> out(K, ComponentList(R, Vec(d)));
    for (ComponentList& task : out)
        for (Vec& c : task)
            for (double& x : c) x = rng.uniform(-5.0, 5.0);
    return out;
}

// Well-separated shared components, per-task noise, then a planted relabel:
// estimates[k][sigma_k[r]] sits near base[r], so sigma_k maps labels back.
struct Planted {
    std::vector<ComponentList> estimates;
    PermutationSet planted;  // planted.perms[k] composed onto base order
};

Planted plant(SplitMix64& rng, std::size_t K, std::size_t R, std::size_t d,
              double noise) {
    ComponentList base(R, Vec(d, 0.0));
    for (std::size_t r = 0; r < R; ++r) base[r][0] = 10.0 * static_cast<double>(r);
    Planted out;
    out.estimates.resize(K);
    out.planted.perms.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        out.planted.perms[k] = testutil::random_perm(rng, R);
        out.estimates[k].assign(R, Vec(d));
        for (std::size_t r = 0; r < R; ++r) {
            Vec c = base[r];
            if (noise > 0.0) axpy(1.0, rng.ball_uniform(d, noise), c);
            out.estimates[k][out.planted.perms[k][r]] = c;
        }
    }
    return out;
}

double brute_force_best_score(const std::vector<ComponentList>& estimates) {
    const std::size_t K = estimates.size();
    const std::size_t R = estimates.front().size();
    const std::vector<Perm> all = all_permutations(R);
    std::vector<std::size_t> pick(K, 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        PermutationSet ps;
        ps.perms.resize(K);
        for (std::size_t k = 0; k < K; ++k) ps.perms[k] = all[pick[k]];
        best = std::min(best, score(ps, estimates, K));
        std::size_t k = 0;
        while (k < K && ++pick[k] == all.size()) pick[k++] = 0;
        if (k == K) break;
    }
    return best;
}

double brute_force_assignment(const Matrix& cost) {
    const std::size_t R = cost.rows();
    double best = std::numeric_limits<double>::infinity();
    for (const Perm& p : all_permutations(R)) {
        double acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) acc += cost(r, p[r]);
        best = std::min(best, acc);
    }
    return best;
}

}  // namespace

TEST_CASE("permutation algebra: compose, inverse, validity") {
    CHECK(identity_perm(3) == Perm{0, 1, 2});
    const Perm p = {2, 0, 1};
    const Perm q = {1, 2, 0};
    Perm pq(3);
    for (std::size_t r = 0; r < 3; ++r) pq[r] = p[q[r]];
    CHECK(compose(p, q) == pq);
    CHECK(compose(p, inverse(p)) == identity_perm(3));
    CHECK(compose(inverse(p), p) == identity_perm(3));
    CHECK_THROWS_AS(compose(p, Perm{0, 1}), ContractError);

    CHECK(is_permutation(Perm{1, 0}));
    CHECK_FALSE(is_permutation(Perm{}));
    CHECK_FALSE(is_permutation(Perm{0, 0}));
    CHECK_FALSE(is_permutation(Perm{0, 2}));

    const std::vector<Perm> all3 = all_permutations(3);
    REQUIRE(all3.size() == 6);
    CHECK(all3.front() == Perm{0, 1, 2});
    CHECK(all3.back() == Perm{2, 1, 0});
    CHECK(std::is_sorted(all3.begin(), all3.end()));
}

TEST_CASE("score: hand values and contract checks") {
    const std::vector<ComponentList> twin = {{{1.0, 2.0}}, {{1.0, 2.0}}};
    PermutationSet id1;
    id1.perms = {identity_perm(1), identity_perm(1)};
    CHECK(score(id1, twin, 2) == 0.0);

    // Single label, components at 0 and 3: each ordered pair contributes 3.
    const std::vector<ComponentList> pair = {{{0.0}}, {{3.0}}};
    CHECK(score(id1, pair, 2) == 6.0);

    // K = 2, R = 2: swapping the second task's labels recovers the match.
    const std::vector<ComponentList> two = {{{0.0}, {5.0}}, {{5.0}, {0.0}}};
    PermutationSet id2;
    id2.perms = {identity_perm(2), identity_perm(2)};
    CHECK(score(id2, two, 2) == 2.0 * (5.0 + 5.0));
    PermutationSet swapped;
    swapped.perms = {identity_perm(2), Perm{1, 0}};
    CHECK(score(swapped, two, 2) == 0.0);

    // Prefix scoring ignores tasks at k_limit and beyond.
    CHECK(score(id2, two, 1) == 0.0);
    CHECK_THROWS_AS(score(id2, two, 3), ContractError);
    PermutationSet bad;
    bad.perms = {Perm{0, 0}, identity_perm(2)};
    CHECK_THROWS_AS(score(bad, two, 2), ContractError);
}

TEST_CASE("score: invariant under one common relabeling") {
    SplitMix64 rng(149);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t K = 2 + rng.below(4);
        const std::size_t R = 2 + rng.below(3);
        const std::vector<ComponentList> est = random_estimates(rng, K, R, 2);
        PermutationSet ps;
        ps.perms.resize(K);
        for (std::size_t k = 0; k < K; ++k) ps.perms[k] = testutil::random_perm(rng, R);
        const Perm iota = testutil::random_perm(rng, R);
        PermutationSet relabeled;
        relabeled.perms.resize(K);
        for (std::size_t k = 0; k < K; ++k) relabeled.perms[k] = compose(ps.perms[k], iota);
        CHECK(std::abs(score(relabeled, est, K) - score(ps, est, K)) < 1e-9);
    }
}

TEST_CASE("align_exhaustive: trivial cases and planted recovery") {
    SplitMix64 rng(151);
    const std::vector<ComponentList> single = random_estimates(rng, 1, 3, 2);
    CHECK(align_exhaustive(single).perms == std::vector<Perm>{identity_perm(3)});

    const std::vector<ComponentList> same(4, random_estimates(rng, 1, 3, 2)[0]);
    for (const Perm& p : align_exhaustive(same).perms) CHECK(p == identity_perm(3));

    for (int trial = 0; trial < 25; ++trial) {
        const Planted inst = plant(rng, 5, 3, 2, 0.5);
        const PermutationSet got = align_exhaustive(inst.estimates);
        const std::vector<char> mask(5, 1);
        CHECK(equal_up_to_common_relabel(got, inst.planted, mask));
    }
}

TEST_CASE("align_exhaustive: matches brute force over all permutation sets") {
    SplitMix64 rng(157);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t K = 2 + rng.below(2);  // brute force is all[.]^K
        const std::size_t R = 2 + rng.below(2);
        const std::vector<ComponentList> est = random_estimates(rng, K, R, 2);
        const PermutationSet got = align_exhaustive(est);
        CHECK(std::abs(score(got, est, K) - brute_force_best_score(est)) < 1e-12);
    }
}

TEST_CASE("align_exhaustive: capacity guard at K * log2(R!) = 30") {
    SplitMix64 rng(163);
    // R = 2 makes log2(R!) = 1, so the guard is exactly K <= 30.
    const Planted ok = plant(rng, 30, 2, 1, 0.1);
    CHECK(align_exhaustive(ok.estimates).perms.size() == 30);
    const Planted over = plant(rng, 31, 2, 1, 0.1);
    CHECK_THROWS_AS(align_exhaustive(over.estimates), CapacityError);
    const Planted wide = plant(rng, 14, 3, 1, 0.1);  // 14 * 2.585 = 36.2
    CHECK_THROWS_AS(align_exhaustive(wide.estimates), CapacityError);
}

TEST_CASE("align_stepwise: Enumerate and Assignment agree everywhere") {
    SplitMix64 rng(167);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t K = 2 + rng.below(4);
        const std::size_t R = 2 + rng.below(3);
        const std::vector<ComponentList> est = random_estimates(rng, K, R, 2);
        const PermutationSet en = align_stepwise(est, StepwiseMode::Enumerate);
        const PermutationSet as = align_stepwise(est, StepwiseMode::Assignment);
        CHECK(en.perms == as.perms);
        CHECK(en.perms[0] == identity_perm(R));
    }
}

TEST_CASE("align_stepwise: planted recovery and the exhaustive bound") {
    SplitMix64 rng(173);
    for (int trial = 0; trial < 25; ++trial) {
        const Planted inst = plant(rng, 6, 4, 3, 0.5);
        const PermutationSet got = align_stepwise(inst.estimates, StepwiseMode::Assignment);
        const std::vector<char> mask(6, 1);
        CHECK(equal_up_to_common_relabel(got, inst.planted, mask));
    }
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t K = 2 + rng.below(3);
        const std::size_t R = 2 + rng.below(3);
        const std::vector<ComponentList> est = random_estimates(rng, K, R, 2);
        const double ex = score(align_exhaustive(est), est, K);
        const double st = score(align_stepwise(est, StepwiseMode::Assignment), est, K);
        PermutationSet id;
        id.perms.assign(K, identity_perm(R));
        CHECK(ex <= st + 1e-12);
        CHECK(ex <= score(id, est, K) + 1e-12);
    }
}

TEST_CASE("align_stepwise: Enumerate guard at R = 10, Assignment scales past it") {
    SplitMix64 rng(179);
    const Planted inst = plant(rng, 2, 11, 1, 0.05);
    CHECK_THROWS_AS(align_stepwise(inst.estimates, StepwiseMode::Enumerate), CapacityError);
    const PermutationSet got = align_stepwise(inst.estimates, StepwiseMode::Assignment);
    const std::vector<char> mask(2, 1);
    CHECK(equal_up_to_common_relabel(got, inst.planted, mask));
}

TEST_CASE("align_stepwise_shuffled: agrees with plain stepwise on separated data") {
    SplitMix64 rng(181);
    const Planted inst = plant(rng, 5, 3, 2, 0.5);
    SplitMix64 vote_rng(5), vote_rng2(5);
    const PermutationSet voted = align_stepwise_shuffled(inst.estimates, 5, vote_rng);
    const std::vector<char> mask(5, 1);
    CHECK(equal_up_to_common_relabel(voted, inst.planted, mask));
    const PermutationSet again = align_stepwise_shuffled(inst.estimates, 5, vote_rng2);
    CHECK(voted.perms == again.perms);
    SplitMix64 dummy(1);
    CHECK_THROWS_AS(align_stepwise_shuffled(inst.estimates, 0, dummy), ContractError);
}

TEST_CASE("hungarian: exact on random matrices and a hand instance") {
    Matrix hand(3, 3);
    const double vals[9] = {4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) hand(i, j) = vals[3 * i + j];
    const Perm hp = hungarian(hand);
    double hc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) hc += hand(i, hp[i]);
    CHECK(hc == 5.0);  // 1 + 2 + 2

    SplitMix64 rng(191);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t R = 1 + rng.below(6);
        Matrix cost(R, R);
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < R; ++j) cost(i, j) = rng.uniform(0.0, 10.0);
        const Perm p = hungarian(cost);
        REQUIRE(is_permutation(p));
        double acc = 0.0;
        for (std::size_t i = 0; i < R; ++i) acc += cost(i, p[i]);
        CHECK(std::abs(acc - brute_force_assignment(cost)) < 1e-12);
    }
    Matrix rect(2, 3);
    CHECK_THROWS_AS(hungarian(rect), ContractError);
}

TEST_CASE("best_permutation_match: recovers the inverse of a planted relabel") {
    SplitMix64 rng(193);
    ComponentList truth(4, Vec(2));
    for (std::size_t r = 0; r < 4; ++r) truth[r] = {6.0 * static_cast<double>(r), -1.0};

    const auto [pid, did] = best_permutation_match(truth, truth);
    CHECK(pid == identity_perm(4));
    for (double v : did) CHECK(v == 0.0);

    for (int trial = 0; trial < 30; ++trial) {
        const Perm q = testutil::random_perm(rng, 4);
        ComponentList est(4);
        for (std::size_t a = 0; a < 4; ++a) {
            est[a] = truth[q[a]];
            axpy(1.0, rng.ball_uniform(2, 0.3), est[a]);
        }
        const auto [p, dists] = best_permutation_match(est, truth);
        CHECK(p == inverse(q));
        for (double v : dists) CHECK(v <= 0.3 + 1e-12);
    }

    // Exact minimum against the 24-permutation brute force on noisy instances.
    for (int trial = 0; trial < 30; ++trial) {
        ComponentList est(4, Vec(2));
        for (Vec& c : est)
            for (double& x : c) x = rng.uniform(-8.0, 8.0);
        const auto [p, dists] = best_permutation_match(est, truth);
        double total = 0.0;
        for (double v : dists) total += v;
        double best = std::numeric_limits<double>::infinity();
        for (const Perm& cand : all_permutations(4)) {
            double acc = 0.0;
            for (std::size_t r = 0; r < 4; ++r) acc += dist(est[cand[r]], truth[r]);
            best = std::min(best, acc);
        }
        CHECK(std::abs(total - best) < 1e-12);
    }

    CHECK_THROWS_AS(best_permutation_match(truth, ComponentList{{0.0, 0.0}}),
                    ContractError);
}

TEST_CASE("common_relabel_error: planted common swap and invariances") {
    MixtureParams t0;
    t0.weights = {0.3, 0.7};
    t0.components = {{0.0, 0.0}, {4.0, 0.0}};
    MixtureParams t1 = t0;
    t1.components[0][1] = 1.0;

    // Both estimates carry the SAME label swap plus a small theta offset.
    MixtureParams e0 = t0, e1 = t1;
    std::swap(e0.components[0], e0.components[1]);
    std::swap(e0.weights[0], e0.weights[1]);
    std::swap(e1.components[0], e1.components[1]);
    std::swap(e1.weights[0], e1.weights[1]);
    e0.components[0][0] += 0.01;

    const CommonRelabelError res = common_relabel_error({e0, e1}, {t0, t1});
    CHECK(res.iota == Perm{1, 0});
    CHECK(res.err_theta == Catch::Approx(0.01).margin(1e-12));
    CHECK(res.err_w == Catch::Approx(0.0).margin(1e-12));

    // Exact estimates: zero error, lex-smallest iota wins the tie only when
    // components are distinguishable; here identity is optimal.
    const CommonRelabelError zero = common_relabel_error({t0, t1}, {t0, t1});
    CHECK(zero.iota == identity_perm(2));
    CHECK(zero.err_theta == 0.0);

    // Applying one more common relabel to every estimate leaves errors fixed.
    SplitMix64 rng(197);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<MixtureParams> est = {e0, e1};
        const Perm extra = testutil::random_perm(rng, 2);
        for (MixtureParams& p : est) {
            MixtureParams moved = permute_components(p, extra);
            p = moved;
        }
        const CommonRelabelError again = common_relabel_error(est, {t0, t1});
        CHECK(again.err_theta == res.err_theta);
        CHECK(again.err_w == res.err_w);
    }

    MixtureParams wide = t0;
    wide.weights = Vec(9, 1.0 / 9.0);
    wide.components.assign(9, Vec(2, 0.0));
    CHECK_THROWS_AS(common_relabel_error({wide}, {wide}), CapacityError);
    CHECK_THROWS_AS(common_relabel_error({}, {}), ContractError);
    CHECK_THROWS_AS(common_relabel_error({e0}, {t0, t1}), ContractError);
}

TEST_CASE("equal_up_to_common_relabel: masks and mismatches") {
    PermutationSet planted;
    planted.perms = {identity_perm(2), Perm{1, 0}, identity_perm(2)};
    PermutationSet recovered;
    recovered.perms = {Perm{1, 0}, identity_perm(2), Perm{1, 0}};
    const std::vector<char> all_in = {1, 1, 1};
    CHECK(equal_up_to_common_relabel(recovered, planted, all_in));

    PermutationSet broken = recovered;
    broken.perms[2] = identity_perm(2);
    CHECK_FALSE(equal_up_to_common_relabel(broken, planted, all_in));
    CHECK(equal_up_to_common_relabel(broken, planted, {1, 1, 0}));
    CHECK(equal_up_to_common_relabel(broken, planted, {0, 0, 0}));
    CHECK_THROWS_AS(equal_up_to_common_relabel(broken, planted, {1, 1}), ContractError);
}
