#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/trainer.hpp"

#include <cmath>
#include <random>

using namespace absorb;

namespace {

Matrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(n, d);
    for (double & v : x.data()) v = g(rng);
    return x;
}

SaeModel perturbed_init(std::size_t d, std::size_t h, std::uint64_t seed, Nonlinearity nl = Nonlinearity::relu()) {
    SaeModel m = init_sae(d, {h, nl}, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> g(0.0, 0.3);
    for (double & v : m.w_enc.data()) v += g(rng);
    for (double & v : m.w_dec.data()) v += g(rng);
    for (double & v : m.b_enc) v = g(rng);
    for (double & v : m.b_dec) v = g(rng);
    return m;
}

FiringSpec hierarchy() {
    auto spec = FiringSpec::independent({0.25, 0.0, 0.05, 0.05});
    spec.add_strict_child(0, 1, 0.05);
    return spec;
}

}  // namespace

TEST_CASE("gradient check on a small random model") {
    const SaeModel m = perturbed_init(8, 4, 3);
    const Matrix x = gaussian(16, 8, 4);
    CHECK(grad_check(m, x, 0.05, 120, 1) <= 1e-4);
    CHECK(grad_check(m, x, 0.0, 120, 2) <= 1e-6);

    const SaeModel k = perturbed_init(8, 4, 5, Nonlinearity::batch_topk(2));
    CHECK(grad_check(k, x, 0.0, 120, 3) <= 1e-4);
}

TEST_CASE("analytic gradients against an independent finite difference") {
    const SaeModel m = perturbed_init(5, 3, 6);
    const Matrix x = gaussian(7, 5, 7);
    const double lambda = 0.1, h = 1e-6;
    const SaeGradients g = loss_gradients(m, x, lambda);
    // b_dec enters the loss smoothly everywhere.
    for (std::size_t i = 0; i < 5; ++i) {
        SaeModel up = m, down = m;
        up.b_dec[i] += h;
        down.b_dec[i] -= h;
        const double num = (compute_loss(up, x, lambda).total - compute_loss(down, x, lambda).total) / (2 * h);
        CHECK(g.b_dec[i] == doctest::Approx(num).epsilon(1e-6));
    }
}

TEST_CASE("dead input gives zero encoder gradient from reconstruction") {
    const SaeModel m = perturbed_init(6, 3, 8);
    const SaeGradients g = loss_gradients(m, Matrix(4, 6), 0.0);
    for (double v : g.w_enc.data()) CHECK(v == 0.0);
}

TEST_CASE("initialization") {
    const SaeModel m = init_sae(50, {4, Nonlinearity::relu()}, 9);
    CHECK(m.w_dec == m.w_enc);
    for (double v : m.b_enc) CHECK(v == 0.0);
    for (double v : m.b_dec) CHECK(v == 0.0);
    double ss = 0;
    for (double v : m.w_enc.data()) ss += v * v;
    const double sd = std::sqrt(ss / static_cast<double>(m.w_enc.data().size()));
    CHECK(sd == doctest::Approx(0.1 / std::sqrt(50.0)).epsilon(0.15));
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.total_samples = 10;
    c.batch_size = 32;
    CHECK_THROWS(c.validate());
    c = {};
    c.learning_rate = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.l1_coeff = -1.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("training is deterministic, consumes fresh data and reduces loss") {
    const auto dict = make_dictionary(50, 4, 0);
    TrainConfig c;
    c.total_samples = 64'000;
    c.checkpoint_every = 100;
    const TrainTrace a = train(dict, hierarchy(), {4, Nonlinearity::relu()}, c);
    const TrainTrace b = train(dict, hierarchy(), {4, Nonlinearity::relu()}, c);
    CHECK(a.model == b.model);
    CHECK(a.steps == c.total_samples / c.batch_size);
    CHECK(a.samples_seen == a.steps * c.batch_size);

    REQUIRE(a.checkpoints.size() >= 6);
    for (std::size_t i = 1; i < a.checkpoints.size(); ++i) {
        CHECK(a.checkpoints[i].step > a.checkpoints[i - 1].step);
        CHECK(a.checkpoints[i].samples_seen > a.checkpoints[i - 1].samples_seen);
        CHECK(std::isfinite(a.checkpoints[i].report.total));
    }
    auto window = [&](std::size_t from) {
        double s = 0;
        for (std::size_t i = from; i < from + 3; ++i) s += a.checkpoints[i].report.total;
        return s / 3;
    };
    CHECK(window(a.checkpoints.size() - 3) <= window(0));

    for (std::size_t r = 0; r < 4; ++r) CHECK(norm(a.model.w_dec.row(r)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.model.provenance == train_provenance(dict, hierarchy(), {4, Nonlinearity::relu()}, c));
}

TEST_CASE("BatchTopK training ignores the L1 coefficient") {
    const auto dict = make_dictionary(20, 4, 1);
    TrainConfig c;
    c.total_samples = 6'400;
    c.batch_size = 64;
    c.seed = 3;
    const SaeShape shape{4, Nonlinearity::batch_topk(1)};
    const TrainTrace a = train(dict, hierarchy(), shape, c);
    c.l1_coeff = 10.0;
    const TrainTrace b = train(dict, hierarchy(), shape, c);
    CHECK(a.model.w_enc == b.model.w_enc);
    CHECK(a.model.w_dec == b.model.w_dec);
}

TEST_CASE("non-finite loss aborts with the trace so far") {
    const auto dict = make_dictionary(20, 4, 1);
    TrainConfig c;
    c.total_samples = 32'000;
    c.learning_rate = 1e200;
    c.decoder_norm = DecoderNorm::none;
    c.checkpoint_every = 1;
    try {
        train(dict, hierarchy(), {4, Nonlinearity::relu()}, c);
        FAIL("expected TrainingError");
    } catch (const TrainingError & e) {
        CHECK(e.trace.steps < c.total_samples / c.batch_size);
    }
}
