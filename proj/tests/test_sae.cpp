#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"
#include "absorb/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace absorb;

namespace {

SaeModel random_model(std::size_t h, std::size_t d, std::uint64_t seed, Nonlinearity nl = Nonlinearity::relu()) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.5);
    SaeModel m = SaeModel::zeros(h, d, nl);
    for (double & v : m.w_enc.data()) v = n(rng);
    for (double & v : m.w_dec.data()) v = n(rng);
    for (double & v : m.b_enc) v = n(rng);
    for (double & v : m.b_dec) v = n(rng);
    return m;
}

Matrix random_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(n, d);
    for (double & v : x.data()) v = g(rng);
    return x;
}

}  // namespace

TEST_CASE("zero input through zero biases gives zero latents and reconstruction") {
    SaeModel m = random_model(4, 6, 1);
    std::fill(m.b_enc.begin(), m.b_enc.end(), 0.0);
    std::fill(m.b_dec.begin(), m.b_dec.end(), 0.0);
    const Matrix z = encode(m, Matrix(3, 6));
    for (double v : z.data()) CHECK(v == 0.0);
    const Matrix r = decode(m, Matrix(3, 4));
    for (double v : r.data()) CHECK(v == 0.0);
}

TEST_CASE("delta SAE encodes f1 + f2 to (1 - delta, 1) and decodes it back") {
    for (double delta : {0.0, 0.3, 0.4, 1.0}) {
        const DeltaSae d = make_delta_sae(delta, 50, 2);
        Matrix x(1, 50);
        for (std::size_t i = 0; i < 50; ++i) x(0, i) = d.f1[i] + d.f2[i];
        const Matrix z = encode(d.model, x);
        CHECK(z(0, 0) == doctest::Approx(1.0 - delta).epsilon(1e-12));
        CHECK(z(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

        Matrix zz(1, 2);
        zz(0, 0) = 1.0 - delta;
        zz(0, 1) = 1.0;
        const Matrix r = decode(d.model, zz);
        for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(r(0, i) - x(0, i)) <= 1e-12);
    }
}

TEST_CASE("identity SAE reconstructs nonnegative input") {
    const SaeModel id = SaeModel::identity(5);
    Matrix x = random_inputs(4, 5, 3);
    for (double & v : x.data()) v = std::abs(v);
    CHECK(decode(id, encode(id, x)) == x);
}

TEST_CASE("BatchTopK matches a brute-force top k*N selection") {
    const SaeModel m = random_model(6, 4, 7, Nonlinearity::batch_topk(2));
    const Matrix x = random_inputs(5, 4, 8);
    const Matrix pre = pre_activations(m, x);
    const Matrix z = encode(m, x);

    // Oracle: sort flat indices by (value desc, index asc), keep positives.
    std::vector<std::size_t> idx(pre.data().size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return pre.data()[a] != pre.data()[b] ? pre.data()[a] > pre.data()[b] : a < b;
    });
    std::vector<double> expected(idx.size(), 0.0);
    for (std::size_t i = 0; i < 2 * 5; ++i) {
        if (pre.data()[idx[i]] > 0) expected[idx[i]] = pre.data()[idx[i]];
    }
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(z.data()[i] == expected[i]);

    const SaeModel k1 = random_model(3, 4, 9, Nonlinearity::batch_topk(1));
    const Matrix z1 = encode(k1, random_inputs(2, 4, 10));
    CHECK(std::count_if(z1.data().begin(), z1.data().end(), [](double v) { return v != 0.0; }) <= 2);
}

TEST_CASE("BatchTopK ties go to the lower flat index") {
    Matrix pre = Matrix::from_rows({{1.0, 2.0}, {2.0, 1.0}});
    apply_nonlinearity(Nonlinearity::batch_topk(1), pre);
    CHECK(pre == Matrix::from_rows({{0.0, 2.0}, {2.0, 0.0}}));
    Matrix tied = Matrix::from_rows({{1.0, 1.0}, {1.0, 1.0}});
    apply_nonlinearity(Nonlinearity::batch_topk(1), tied);
    CHECK(tied == Matrix::from_rows({{1.0, 1.0}, {0.0, 0.0}}));
}

TEST_CASE("decode is affine") {
    const SaeModel m = random_model(4, 6, 11);
    const Matrix z1 = random_inputs(3, 4, 12), z2 = random_inputs(3, 4, 13);
    const double a = 0.7, b = -1.9;
    Matrix mix(3, 4);
    for (std::size_t i = 0; i < mix.data().size(); ++i) mix.data()[i] = a * z1.data()[i] + b * z2.data()[i];
    const Matrix lhs = decode(m, mix), d1 = decode(m, z1), d2 = decode(m, z2);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            const double rhs = a * d1(r, c) + b * d2(r, c) - (a + b - 1) * m.b_dec[c];
            CHECK(std::abs(lhs(r, c) - rhs) <= 1e-10);
        }
    }
}

TEST_CASE("error term and nonnegativity invariants") {
    const SaeModel m = random_model(5, 7, 14);
    const Matrix x = random_inputs(20, 7, 15);
    const SaeActivations acts = run_sae(m, x);
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        CHECK(std::abs(acts.reconstruction.data()[i] + acts.error.data()[i] - x.data()[i]) <= 1e-14);
    }
    for (double v : acts.latents.data()) CHECK(v >= 0.0);
}

TEST_CASE("loss report matches direct computation") {
    const SaeModel m = random_model(3, 4, 16);
    const Matrix x = random_inputs(10, 4, 17);
    const double lambda = 0.3;
    const LossReport rep = compute_loss(m, x, lambda);
    const SaeActivations acts = run_sae(m, x);

    double mse = 0, l1 = 0, l0 = 0;
    std::vector<double> mean(4, 0.0);
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            mse += acts.error(r, c) * acts.error(r, c);
            mean[c] += x(r, c) / 10;
        }
        for (std::size_t h = 0; h < 3; ++h) {
            l1 += std::abs(acts.latents(r, h));
            l0 += acts.latents(r, h) > 0;
        }
    }
    double var = 0;
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 4; ++c) var += (x(r, c) - mean[c]) * (x(r, c) - mean[c]);
    mse /= 10, l1 /= 10, l0 /= 10, var /= 10;

    CHECK(rep.recon_mse == doctest::Approx(mse).epsilon(1e-12));
    CHECK(rep.sparsity_l1 == doctest::Approx(l1).epsilon(1e-12));
    CHECK(rep.l0_mean == doctest::Approx(l0).epsilon(1e-12));
    CHECK(rep.explained_variance == doctest::Approx(1 - mse / var).epsilon(1e-12));
    CHECK(rep.total == rep.recon_mse + lambda * rep.sparsity_l1);

    SaeModel topk = m;
    topk.nonlinearity = Nonlinearity::batch_topk(1);
    const LossReport tk = compute_loss(topk, x, lambda);
    CHECK(tk.total == tk.recon_mse);
}

TEST_CASE("perfect reconstruction and the p11/p10 sparsity example") {
    const DeltaSae d = make_delta_sae(1.0, 50, 4);
    // 5 both, 20 parent-only, 75 neither: p11 = 0.05, p10 = 0.20.
    Matrix x(100, 50);
    for (std::size_t r = 0; r < 25; ++r) {
        for (std::size_t i = 0; i < 50; ++i) x(r, i) = d.f1[i] + (r < 5 ? d.f2[i] : 0.0);
    }
    const LossReport rep = compute_loss(d.model, x, 0.1);
    CHECK(rep.recon_mse <= 1e-28);
    CHECK(rep.sparsity_l1 == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("model validation") {
    SaeModel m = random_model(2, 3, 18);
    CHECK_NOTHROW(m.validate());
    m.w_dec(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(m.validate());
    SaeModel k = random_model(2, 3, 19, Nonlinearity::batch_topk(3));
    CHECK_THROWS(k.validate());
    CHECK_THROWS_AS(encode(random_model(2, 3, 20), Matrix(1, 4)), ShapeError);
    CHECK_THROWS(compute_loss(random_model(2, 3, 21), Matrix(0, 3), 0.0));
}
