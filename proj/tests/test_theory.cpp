#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/theory.hpp"

#include <cmath>
#include <vector>

using namespace absorb;

TEST_CASE("case activations of the delta SAE") {
    const DeltaSae d = make_delta_sae(0.4, 50, 1);
    const CaseActivations both = case_activations(d, HierarchyCase::both);
    CHECK(both.z1 == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(both.z2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(both.error_norm <= 1e-12);

    const CaseActivations none = case_activations(d, HierarchyCase::neither);
    CHECK(none.z1 == 0.0);
    CHECK(none.z2 == 0.0);
    CHECK(none.error_norm == 0.0);

    const DeltaSae full = make_delta_sae(1.0, 50, 1);
    const CaseActivations parent = case_activations(full, HierarchyCase::parent_only);
    CHECK(parent.z1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(parent.z2) <= 1e-12);
    CHECK(parent.error_norm <= 1e-12);
}

TEST_CASE("reconstruction is exact across a delta grid") {
    for (int i = 0; i <= 100; ++i) {
        const DeltaSae d = make_delta_sae(i / 100.0, 50, 2);
        for (auto c : {HierarchyCase::parent_only, HierarchyCase::both, HierarchyCase::neither}) {
            CHECK(case_activations(d, c).error_norm <= 1e-9);
        }
    }
}

TEST_CASE("closed-form sparsity loss") {
    CHECK(sparsity_loss_closed_form(HierarchyProbabilities::from(0.3, 0.2), 0.0) == doctest::Approx(0.8));
    CHECK(sparsity_loss_closed_form(HierarchyProbabilities::from(0.05, 0.2), 1.0) == doctest::Approx(0.25));
    const auto no_child = HierarchyProbabilities::from(0.0, 0.4);
    CHECK(sparsity_loss_closed_form(no_child, 0.0) == sparsity_loss_closed_form(no_child, 1.0));
    CHECK_THROWS(sparsity_loss_closed_form(no_child, -0.1));
    CHECK_THROWS(sparsity_loss_closed_form(no_child, 1.1));
    CHECK_THROWS(HierarchyProbabilities::from(0.7, 0.5).validate());
}

TEST_CASE("empirical sparsity loss agrees with the closed form") {
    const DeltaSae d = make_delta_sae(0.5, 50, 3);
    const auto probs = HierarchyProbabilities::from(0.3, 0.2);
    const Estimate e = sparsity_loss_empirical(d, probs, 100'000, 4);
    CHECK(std::abs(e.mean - sparsity_loss_closed_form(probs, 0.5)) <= 3 * e.std_error);

    const Estimate silent = sparsity_loss_empirical(d, HierarchyProbabilities::from(0.0, 0.0), 1000, 5);
    CHECK(silent.mean == 0.0);

    // Every row has the parent; half also have the child. delta = 1 gives 1 per row.
    const DeltaSae full = make_delta_sae(1.0, 50, 3);
    const Estimate one = sparsity_loss_empirical(full, HierarchyProbabilities::from(0.5, 0.5), 10'000, 6);
    CHECK(one.mean == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("loss derivative in delta") {
    const DerivativeCheck c = loss_derivative_check(HierarchyProbabilities::from(0.25, 0.5), 0.5, 0.01);
    CHECK(c.analytic == doctest::Approx(-0.25));
    CHECK(c.numeric == doctest::Approx(-0.25).epsilon(1e-9));
    const DerivativeCheck flat = loss_derivative_check(HierarchyProbabilities::from(0.0, 0.5), 0.5, 0.01);
    CHECK(flat.analytic == 0.0);
    CHECK(flat.numeric == doctest::Approx(0.0));
}

TEST_CASE("closed form decreases strictly in delta when the child can fire") {
    for (double p11 : {0.01, 0.1, 0.3}) {
        const auto probs = HierarchyProbabilities::from(p11, 0.2);
        double last = sparsity_loss_closed_form(probs, 0.0);
        for (int i = 1; i <= 20; ++i) {
            const double v = sparsity_loss_closed_form(probs, i / 20.0);
            CHECK(v < last);
            last = v;
        }
    }
}

TEST_CASE("delta absorption model over a dictionary") {
    const auto dict = basis_dictionary(6, 4);
    const std::vector<std::size_t> children = {2, 3};
    const SaeModel m = delta_absorption_model(dict, 0, children, 1.0);
    CHECK(m.width() == 4);
    // Parent encoder row: f0 - f2 - f3.
    CHECK(m.w_enc(0, 0) == 1.0);
    CHECK(m.w_enc(0, 2) == -1.0);
    CHECK(m.w_enc(0, 3) == -1.0);
    CHECK(m.w_enc(1, 1) == 1.0);
    // Child decoder rows: f_c + f0.
    CHECK(m.w_dec(2, 2) == 1.0);
    CHECK(m.w_dec(2, 0) == 1.0);
    CHECK(m.w_dec(1, 0) == 0.0);

    Matrix x(1, 6);
    x(0, 0) = 1.0;
    x(0, 2) = 1.0;
    const Matrix z = encode(m, x);
    CHECK(z(0, 0) == 0.0);
    CHECK(z(0, 2) == 1.0);
    const Matrix r = decode(m, z);
    for (std::size_t i = 0; i < 6; ++i) CHECK(r(0, i) == x(0, i));
}

TEST_CASE("verify_theory passes with default settings") {
    TheoryCheckConfig cfg;
    cfg.samples = 50'000;
    const TheoryReport rep = verify_theory(cfg);
    CHECK(rep.reconstruction.grid_points == 101);
    CHECK(rep.reconstruction.pass);
    CHECK(rep.sparsity.size() == cfg.probs.size() * cfg.deltas.size());
    for (const auto & row : rep.sparsity) CHECK(row.pass);
    for (const auto & row : rep.monotonicity) CHECK(row.strictly_decreasing);
    CHECK(rep.pass());
}
