#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/synthgen.hpp"

#include <cmath>

using namespace absorb;

namespace {

void check_orthonormal(const FeatureDictionary & d) {
    for (std::size_t i = 0; i < d.count; ++i) {
        CHECK(std::abs(norm(d.feature(i)) - 1.0) <= 1e-12);
        for (std::size_t j = i + 1; j < d.count; ++j) {
            CHECK(std::abs(dot(d.feature(i), d.feature(j))) <= 1e-12);
        }
    }
}

FiringSpec basic_hierarchy() {
    auto spec = FiringSpec::independent({0.25, 0.0, 0.05, 0.05});
    spec.add_strict_child(0, 1, 0.05);
    return spec;
}

}  // namespace

TEST_CASE("matrix helpers") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
    CHECK(matmul(a, b) == Matrix::from_rows({{19, 22}, {43, 50}}));
    CHECK(matmul_bt(a, b) == Matrix::from_rows({{17, 23}, {39, 53}}));
    CHECK(a.transposed() == Matrix::from_rows({{1, 3}, {2, 4}}));
    const std::vector<double> zero = {0, 0};
    CHECK(cosine(zero, a.row(0)) == 0.0);
    CHECK_THROWS_AS(matmul(a, Matrix(3, 1)), ShapeError);
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
}

TEST_CASE("make_dictionary shapes and orthonormality") {
    const auto d4 = make_dictionary(50, 4, 0);
    CHECK(d4.directions.rows() == 4);
    CHECK(d4.directions.cols() == 50);
    check_orthonormal(d4);

    const auto d1 = make_dictionary(1, 1, 7);
    CHECK(std::abs(d1.directions(0, 0)) == 1.0);

    const auto d12 = make_dictionary(50, 12, 3);
    CHECK(d12.directions.rows() == 12);
    check_orthonormal(d12);

    CHECK(make_dictionary(50, 12, 3).directions == d12.directions);
    CHECK(make_dictionary(50, 12, 4).directions != d12.directions);
    CHECK_THROWS_AS(make_dictionary(3, 4, 0), DimensionError);
    check_orthonormal(basis_dictionary(20, 14));
}

TEST_CASE("hierarchy firing rates within three binomial sigma") {
    const auto dict = make_dictionary(50, 4, 0);
    const auto spec = basic_hierarchy();
    CHECK(spec.hierarchy.at(0).cond_prob_given_parent == doctest::Approx(0.2).epsilon(1e-15));
    const std::size_t n = 100000;
    const auto batch = sample_batch(dict, spec, n, 11);
    const double expected[] = {0.25, 0.05, 0.05, 0.05};
    for (std::size_t f = 0; f < 4; ++f) {
        std::size_t fired = 0;
        for (std::size_t r = 0; r < n; ++r) {
            fired += batch.firings(r, f) > 0.0;
        }
        const double sigma = std::sqrt(expected[f] * (1 - expected[f]) / static_cast<double>(n));
        CHECK(std::abs(static_cast<double>(fired) / n - expected[f]) <= 3 * sigma);
    }
    const auto marginal = spec.marginal_rates();
    for (std::size_t f = 0; f < 4; ++f) {
        CHECK(marginal[f] == doctest::Approx(expected[f]).epsilon(1e-12));
    }
}

TEST_CASE("nothing fires when every probability is zero") {
    const auto dict = make_dictionary(8, 3, 1);
    const auto batch = sample_batch(dict, FiringSpec::independent({0, 0, 0}), 10, 2);
    for (double v : batch.activations.data()) {
        CHECK(v == 0.0);
    }
    for (double v : batch.firings.data()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("batch invariants: hierarchy soundness, reconstruction identity, split") {
    const auto dict = make_dictionary(50, 4, 5);
    auto spec = basic_hierarchy();
    spec.magnitude_std[0] = std::sqrt(0.1);
    const std::size_t n = 5001;
    const auto batch = sample_batch(dict, spec, n, 9);
    std::size_t orphan = 0, negative = 0;
    for (std::size_t r = 0; r < n; ++r) {
        orphan += batch.firings(r, 1) > 0.0 && batch.firings(r, 0) == 0.0;
        for (std::size_t f = 0; f < 4; ++f) {
            negative += batch.firings(r, f) < 0.0;
        }
    }
    CHECK(orphan == 0);
    CHECK(negative == 0);

    const Matrix rebuilt = matmul(batch.firings, dict.directions);
    double worst = 0.0;
    for (std::size_t i = 0; i < rebuilt.data().size(); ++i) {
        worst = std::max(worst, std::abs(rebuilt.data()[i] - batch.activations.data()[i]));
    }
    CHECK(worst == 0.0);

    const auto test_rows = batch.rows_in(Split::test).size();
    CHECK(std::abs(static_cast<double>(test_rows) - 0.2 * n) <= 1.0);
    CHECK(sample_batch(dict, spec, n, 9) == batch);
    CHECK(assign_split(100, 3) == assign_split(100, 3));
}

TEST_CASE("spec validation") {
    auto cyc = FiringSpec::independent({0.5, 0.5});
    cyc.hierarchy = {{0, 1, 0.5, 0.0}, {1, 0, 0.5, 0.0}};
    CHECK_THROWS_AS(cyc.validate(), SpecError);

    auto two_parents = FiringSpec::independent({0.5, 0.5, 0.0});
    two_parents.hierarchy = {{0, 2, 0.5, 0.0}, {1, 2, 0.5, 0.0}};
    CHECK_THROWS_AS(two_parents.validate(), SpecError);

    CHECK_THROWS_AS(FiringSpec::independent({1.5}).validate(), SpecError);
    CHECK(conditional_from_overall(0.05, 0.25) == doctest::Approx(0.2));

    const auto dict = make_dictionary(10, 3, 0);
    CHECK_THROWS_AS(sample_batch(dict, FiringSpec::independent({0.1, 0.1}), 5, 0), ShapeError);
}

TEST_CASE("labeled tasks") {
    const auto dict = make_dictionary(20, 5, 2);
    const auto spec = FiringSpec::independent({0, 0, 0, 0, 0.1});

    const auto two = make_labeled_task(dict, spec, 2, 1000, 4);
    std::size_t zeros = 0;
    for (std::size_t r = 0; r < two.size(); ++r) {
        const int y = (*two.labels)[r];
        zeros += y == 0;
        const int class_features = (two.firings(r, 0) > 0) + (two.firings(r, 1) > 0);
        CHECK(class_features == 1);
        CHECK(two.firings(r, static_cast<std::size_t>(y)) > 0.0);
    }
    CHECK(std::abs(static_cast<double>(zeros) - 500.0) <= 3 * std::sqrt(1000 * 0.25));

    const auto one = make_labeled_task(dict, spec, 1, 50, 4);
    for (int y : *one.labels) {
        CHECK(y == 0);
    }

    ClassTask split_task;
    split_task.classes = 2;
    split_task.sub_features = {{{2, 0.5}, {3, 0.5}}, {}};
    const auto sub = make_labeled_task(dict, spec, split_task, 2000, 8);
    for (std::size_t r = 0; r < sub.size(); ++r) {
        const int subs = (sub.firings(r, 2) > 0) + (sub.firings(r, 3) > 0);
        CHECK(subs == ((*sub.labels)[r] == 0 ? 1 : 0));
    }

    CHECK_THROWS_AS(make_labeled_task(dict, FiringSpec::independent({0.2, 0, 0, 0, 0}), 2, 10, 0), SpecError);
    CHECK_THROWS_AS(make_labeled_task(dict, spec, 6, 10, 0), SpecError);
}

TEST_CASE("stream index only grows") {
    const auto dict = make_dictionary(10, 3, 0);
    FeatureSampler s(dict, FiringSpec::independent({0.3, 0.3, 0.3}), 1);
    std::uint64_t last = s.stream_index();
    for (int i = 0; i < 3; ++i) {
        s.draw_activations(7);
        CHECK(s.stream_index() == last + 7);
        last = s.stream_index();
    }
}
