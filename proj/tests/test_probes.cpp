#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/probes.hpp"

#include <cmath>
#include <random>

using namespace absorb;

namespace {

struct Data {
    Matrix x;
    std::vector<int> y;
    std::vector<Split> split;
};

// Two Gaussian blobs at +-2 along the first axis.
Data blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.5);
    Data out{Matrix(n, d), std::vector<int>(n), assign_split(n, seed)};
    for (std::size_t r = 0; r < n; ++r) {
        out.y[r] = static_cast<int>(r % 2);
        for (std::size_t c = 0; c < d; ++c) out.x(r, c) = g(rng);
        out.x(r, 0) += out.y[r] ? 2.0 : -2.0;
    }
    return out;
}

// Class 0 is carried by latent 0 or 1 (half each), class 1 by 2, class 2 by 3.
Data split_latents(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(1.0, 1.5);
    Data out{Matrix(n, 4), std::vector<int>(n), assign_split(n, seed)};
    for (std::size_t r = 0; r < n; ++r) {
        const int y = static_cast<int>(r % 3);
        out.y[r] = y;
        const std::size_t latent = y == 0 ? (r / 3) % 2 : static_cast<std::size_t>(y) + 1;
        out.x(r, latent) = mag(rng);
    }
    return out;
}

}  // namespace

TEST_CASE("separable data is learned") {
    const Data d = blobs(2000, 5, 1);
    for (ProbeKind kind : {ProbeKind::one_vs_rest, ProbeKind::multinomial}) {
        ProbeConfig cfg;
        cfg.kind = kind;
        const ProbeModel p = train_probe(d.x, d.y, d.split, cfg);
        CHECK(p.classes() == 2);
        const EvalReport e = evaluate(p, d.x, d.y, d.split);
        CHECK(e.mean_f1 >= 0.99);
        CHECK(e.test_rows == std::count(d.split.begin(), d.split.end(), Split::test));
    }
}

TEST_CASE("a huge L1 penalty zeroes every weight") {
    const Data d = blobs(1000, 5, 2);
    ProbeConfig cfg;
    cfg.l1_coeff = 10.0;
    const ProbeModel p = train_probe(d.x, d.y, d.split, cfg);
    for (double w : p.weights.data()) CHECK(w == 0.0);
}

TEST_CASE("shuffled labels give chance performance") {
    const Data d = blobs(4000, 5, 3);
    std::vector<int> y = d.y;
    std::shuffle(y.begin(), y.end(), std::mt19937_64(4));
    const ProbeModel p = train_probe(d.x, y, d.split, {});
    const EvalReport e = evaluate(p, d.x, y, d.split);
    CHECK(std::abs(e.mean_f1 - 0.5) <= 0.1);
}

TEST_CASE("k-sparse selection") {
    ProbeModel p;
    p.weights = Matrix::from_rows({{0.5, -0.9, 0.1}});
    p.bias = {0.0};
    CHECK(select_k_sparse(p, 0, 1) == std::vector<std::size_t>{1});
    CHECK(select_k_sparse(p, 0, 1, KSelection::positive) == std::vector<std::size_t>{0});
    CHECK(select_k_sparse(p, 0, 3) == std::vector<std::size_t>{1, 0, 2});
    CHECK(select_k_sparse(p, 0, 3, KSelection::positive) == std::vector<std::size_t>{0, 2, 1});
    CHECK_THROWS(select_k_sparse(p, 0, 4));
    CHECK_THROWS(select_k_sparse(p, 0, 0));

    ProbeModel tie;
    tie.weights = Matrix::from_rows({{0.3, -0.3, 0.3}});
    tie.bias = {0.0};
    CHECK(select_k_sparse(tie, 0, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("k-sparse curve jumps only for the split class") {
    const Data d = split_latents(3000, 5);
    KSparseSettings s;
    s.k_max = 3;
    const auto curve = k_sparse_curve(d.x, d.y, d.split, s);
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].f1[0] < 0.8);
    CHECK(curve[1].f1[0] >= 0.99);
    for (std::size_t c : {1u, 2u}) {
        CHECK(curve[0].f1[c] >= 0.99);
        CHECK(std::abs(curve[1].f1[c] - curve[0].f1[c]) <= 0.01);
    }
    for (const auto & pt : curve) {
        for (const auto & m : pt.mask) CHECK(m.size() == pt.k);
    }
}

TEST_CASE("evaluation counts") {
    // 20 rows with parent and child, 40 parent only, 40 neither. Label = parent fires.
    Matrix latents(100, 1);
    std::vector<int> y(100, 0);
    for (std::size_t r = 0; r < 60; ++r) y[r] = 1;
    for (std::size_t r = 20; r < 60; ++r) latents(r, 0) = 1.0;
    const std::vector<Split> test(100, Split::test);

    const ClassEval parent_only = evaluate_latent(latents, 0, y, test, 1);
    CHECK(parent_only.precision == 1.0);
    CHECK(parent_only.recall == doctest::Approx(40.0 / 60.0));
    CHECK(parent_only.tp == 40);
    CHECK(parent_only.fn == 20);
    CHECK(parent_only.tn == 40);

    const ClassEval silent = evaluate_latent(Matrix(100, 1), 0, y, test, 1);
    CHECK(silent.recall == 0.0);
    CHECK(silent.f1 == 0.0);

    const ClassEval perfect = ClassEval::from_counts(10, 0, 0, 5);
    CHECK(perfect.f1 == 1.0);

    const std::vector<Split> train(100, Split::train);
    ProbeModel p;
    p.weights = Matrix::from_rows({{1.0}});
    p.bias = {0.0};
    CHECK_THROWS_AS(evaluate(p, latents, y, train), ProbeError);
}

TEST_CASE("probe training rejects degenerate labels") {
    const Data d = blobs(100, 3, 6);
    const std::vector<int> one(100, 0);
    CHECK_THROWS(train_probe(d.x, one, d.split, {}));
}

TEST_CASE("matching latents to a probe direction") {
    const SaeModel id = SaeModel::identity(5);
    ProbeModel p;
    p.weights = Matrix(1, 5);
    p.weights(0, 3) = 1.0;
    p.bias = {0.0};
    auto m = match_latents_to_probe(id, p);
    CHECK(m[0].latent == 3);
    CHECK(m[0].cosine == doctest::Approx(1.0));
    p.weights(0, 3) = 7.0;
    m = match_latents_to_probe(id, p);
    CHECK(m[0].latent == 3);
    CHECK(m[0].cosine == doctest::Approx(1.0));
}

TEST_CASE("masked probes only use their columns") {
    const Data d = split_latents(1500, 7);
    const std::vector<std::vector<std::size_t>> mask = {{0}, {2, 3}, {3}};
    const ProbeModel p = train_masked_probe(d.x, d.y, d.split, mask, {});
    std::size_t nonzero = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < 4; ++j) {
            const bool allowed = std::find(mask[c].begin(), mask[c].end(), j) != mask[c].end();
            if (!allowed) CHECK(p.weights(c, j) == 0.0);
            nonzero += p.weights(c, j) != 0.0;
        }
    }
    CHECK(nonzero <= 2 * 3);
    CHECK(p.feature_mask.has_value());
}
