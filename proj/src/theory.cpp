#include "absorb/theory.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace absorb {

HierarchyProbabilities HierarchyProbabilities::from(double p11, double p10) {
    HierarchyProbabilities p{p11, p10, 1.0 - p11 - p10};
    p.validate();
    return p;
}

void HierarchyProbabilities::validate() const {
    for (double p : {p11, p10, p00}) {
        if (!(p >= -1e-12 && p <= 1.0 + 1e-12)) {
            throw std::invalid_argument("hierarchy probabilities must lie in [0, 1]");
        }
    }
    if (std::abs(p11 + p10 + p00 - 1.0) > 1e-12) {
        throw std::invalid_argument("p11 + p10 + p00 must equal 1");
    }
}

namespace {

void require_delta(double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) {
        throw std::invalid_argument("delta must lie in [0, 1]");
    }
}

}  // namespace

DeltaSae make_delta_sae(double delta, std::size_t dim, std::uint64_t seed) {
    require_delta(delta);
    const FeatureDictionary dict = make_dictionary(dim, 2, seed);
    DeltaSae out;
    out.delta = delta;
    out.f1.assign(dict.feature(0).begin(), dict.feature(0).end());
    out.f2.assign(dict.feature(1).begin(), dict.feature(1).end());
    out.model = SaeModel::zeros(2, dim);
    for (std::size_t j = 0; j < dim; ++j) {
        out.model.w_enc(0, j) = out.f1[j] - delta * out.f2[j];
        out.model.w_enc(1, j) = out.f2[j];
        out.model.w_dec(0, j) = out.f1[j];
        out.model.w_dec(1, j) = out.f2[j] + delta * out.f1[j];
    }
    out.model.provenance = "delta-sae";
    return out;
}

namespace {

void fill_case(const DeltaSae & dsae, HierarchyCase which, std::span<double> row) {
    const bool parent = which != HierarchyCase::neither;
    const bool child = which == HierarchyCase::both;
    for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = (parent ? dsae.f1[j] : 0.0) + (child ? dsae.f2[j] : 0.0);
    }
}

}  // namespace

CaseActivations case_activations(const DeltaSae & dsae, HierarchyCase which) {
    Matrix input(1, dsae.f1.size());
    fill_case(dsae, which, input.row(0));
    const SaeActivations acts = run_sae(dsae.model, input);
    return {acts.latents(0, 0), acts.latents(0, 1), norm(acts.error.row(0))};
}

double sparsity_loss_closed_form(const HierarchyProbabilities & probs, double delta) {
    require_delta(delta);
    return probs.p11 * (2.0 - delta) + probs.p10;
}

Estimate sparsity_loss_empirical(const DeltaSae & dsae, const HierarchyProbabilities & probs, std::size_t n,
                                 std::uint64_t seed) {
    if (n == 0) {
        throw std::invalid_argument("need at least one sample");
    }
    probs.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr std::size_t kChunk = 4096;
    const std::size_t d = dsae.f1.size();

    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t done = 0; done < n;) {
        const std::size_t rows = std::min(kChunk, n - done);
        Matrix inputs(rows, d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double u = unit(rng);
            const HierarchyCase which = u < probs.p11               ? HierarchyCase::both
                                        : u < probs.p11 + probs.p10 ? HierarchyCase::parent_only
                                                                    : HierarchyCase::neither;
            fill_case(dsae, which, inputs.row(r));
        }
        const Matrix z = encode(dsae.model, inputs);
        for (std::size_t r = 0; r < rows; ++r) {
            const double s = std::abs(z(r, 0)) + std::abs(z(r, 1));
            sum += s;
            sum_sq += s * s;
        }
        done += rows;
    }
    const auto nn = static_cast<double>(n);
    const double mean = sum / nn;
    const double var = n > 1 ? std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0)) : 0.0;
    return {mean, std::sqrt(var / nn)};
}

DerivativeCheck loss_derivative_check(const HierarchyProbabilities & probs, double delta, double h) {
    if (!(h > 0.0) || delta - h < 0.0 || delta + h > 1.0) {
        throw std::invalid_argument("need h > 0 and delta +- h inside [0, 1]");
    }
    const double numeric =
        (sparsity_loss_closed_form(probs, delta + h) - sparsity_loss_closed_form(probs, delta - h)) / (2.0 * h);
    return {-probs.p11, numeric};
}

SaeModel delta_absorption_model(const FeatureDictionary & dict, std::size_t parent,
                                std::span<const std::size_t> children, double delta) {
    require_delta(delta);
    if (parent >= dict.count) {
        throw std::invalid_argument("parent index out of range");
    }
    SaeModel m = SaeModel::zeros(dict.count, dict.dim);
    m.w_enc = dict.directions;
    m.w_dec = dict.directions;
    for (std::size_t c : children) {
        if (c >= dict.count || c == parent) {
            throw std::invalid_argument("bad child index");
        }
        axpy(-delta, dict.feature(c), m.w_enc.row(parent));
        axpy(delta, dict.feature(parent), m.w_dec.row(c));
    }
    m.provenance = "delta-absorption";
    return m;
}

bool TheoryReport::pass() const {
    bool ok = reconstruction.pass;
    for (const auto & r : sparsity) {
        ok = ok && r.pass;
    }
    for (const auto & r : monotonicity) {
        ok = ok && r.pass;
    }
    return ok;
}

TheoryReport verify_theory(const TheoryCheckConfig & config) {
    if (config.grid_points < 2) {
        throw std::invalid_argument("delta grid needs at least two points");
    }
    TheoryReport rep;
    rep.samples = config.samples;
    rep.seed = config.seed;

    rep.reconstruction.grid_points = config.grid_points;
    for (std::size_t i = 0; i < config.grid_points; ++i) {
        const double delta = static_cast<double>(i) / static_cast<double>(config.grid_points - 1);
        const DeltaSae dsae = make_delta_sae(delta, 50, config.seed);
        for (HierarchyCase c : {HierarchyCase::parent_only, HierarchyCase::both, HierarchyCase::neither}) {
            rep.reconstruction.max_error_norm = std::max(rep.reconstruction.max_error_norm, case_activations(dsae, c).error_norm);
        }
    }
    rep.reconstruction.pass = rep.reconstruction.max_error_norm <= rep.reconstruction.tolerance;

    std::uint64_t stream = 0;
    for (const auto & probs : config.probs) {
        for (double delta : config.deltas) {
            const DeltaSae dsae = make_delta_sae(delta, 50, config.seed);
            const Estimate est =
                sparsity_loss_empirical(dsae, probs, config.samples, derive_seed(config.seed, ++stream));
            TheoryReport::SparsityRow row{probs.p11, probs.p10, delta, sparsity_loss_closed_form(probs, delta),
                                       est.mean, est.std_error, false};
            row.pass = std::abs(row.empirical - row.closed_form) <= 3.0 * row.std_error ||
                       (row.std_error == 0.0 && row.empirical == row.closed_form);
            rep.sparsity.push_back(row);
        }

        TheoryReport::MonotoneRow cor{probs.p11, probs.p10, true, 0.0, false};
        double prev = sparsity_loss_closed_form(probs, 0.0);
        bool nonincreasing = true;
        for (std::size_t i = 1; i <= 10; ++i) {
            const double delta = static_cast<double>(i) / 10.0;
            const double cur = sparsity_loss_closed_form(probs, delta);
            cor.strictly_decreasing = cor.strictly_decreasing && cur < prev;
            nonincreasing = nonincreasing && cur <= prev;
            prev = cur;
            if (i < 10) {
                const DerivativeCheck dc = loss_derivative_check(probs, delta, 0.01);
                cor.worst_slope_error = std::max(cor.worst_slope_error, std::abs(dc.numeric - dc.analytic));
            }
        }
        const bool shape_ok = probs.p11 > 0.0 ? cor.strictly_decreasing : nonincreasing;
        cor.pass = shape_ok && cor.worst_slope_error <= 1e-12;
        rep.monotonicity.push_back(cor);
    }
    return rep;
}

}  // namespace absorb
