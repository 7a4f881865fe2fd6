#pragma once

// The delta-absorption family for a parent/child feature pair and its
// closed-form loss.
//
//   w_enc rows: f1 - delta*f2, f2       w_dec rows: f1, f2 + delta*f1
//
// f1 is the parent, f2 the child (f2 fires only together with f1).

#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace absorb {

// Probabilities of (parent, child) = (1,1), (1,0), (0,0). (0,1) is impossible.
struct HierarchyProbabilities {
    double p11 = 0.0;
    double p10 = 0.0;
    double p00 = 1.0;

    // p00 filled in as 1 - p11 - p10.
    static HierarchyProbabilities from(double p11, double p10);
    void validate() const;
};

struct DeltaSae {
    double delta = 0.0;
    std::vector<double> f1;
    std::vector<double> f2;
    SaeModel model;  // width 2, zero biases
};

DeltaSae make_delta_sae(double delta, std::size_t dim = 50, std::uint64_t seed = 0);

enum class HierarchyCase { parent_only, both, neither };

struct CaseActivations {
    double z1 = 0.0;
    double z2 = 0.0;
    double error_norm = 0.0;
};

// Runs f1 (+ f2) through encode/decode of the delta SAE.
CaseActivations case_activations(const DeltaSae & dsae, HierarchyCase which);

// p11 (2 - delta) + p10. Throws for delta outside [0, 1].
double sparsity_loss_closed_form(const HierarchyProbabilities & probs, double delta);

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
};

// Monte Carlo mean of |z1| + |z2| over the three cases.
Estimate sparsity_loss_empirical(const DeltaSae & dsae, const HierarchyProbabilities & probs, std::size_t n,
                                 std::uint64_t seed);

struct DerivativeCheck {
    double analytic = 0.0;
    double numeric = 0.0;
};

DerivativeCheck loss_derivative_check(const HierarchyProbabilities & probs, double delta, double h);

// Full-width SAE over a dictionary: one latent per feature, identity rows for
// every feature except the parent (encoder f_p - delta * sum f_c) and its
// children (decoder f_c + delta * f_p). Zero biases.
SaeModel delta_absorption_model(const FeatureDictionary & dict, std::size_t parent,
                                std::span<const std::size_t> children, double delta);

struct TheoryReport {
    struct Reconstruction {
        std::size_t grid_points = 0;
        double max_error_norm = 0.0;
        double tolerance = 1e-9;
        bool pass = false;
    };
    struct SparsityRow {
        double p11 = 0.0;
        double p10 = 0.0;
        double delta = 0.0;
        double closed_form = 0.0;
        double empirical = 0.0;
        double std_error = 0.0;
        bool pass = false;
    };
    struct MonotoneRow {
        double p11 = 0.0;
        double p10 = 0.0;
        bool strictly_decreasing = false;
        double worst_slope_error = 0.0;
        bool pass = false;
    };

    Reconstruction reconstruction;
    std::vector<SparsityRow> sparsity;
    std::vector<MonotoneRow> monotonicity;
    std::size_t samples = 0;
    std::uint64_t seed = 0;

    bool pass() const;
};

struct TheoryCheckConfig {
    std::vector<HierarchyProbabilities> probs = {HierarchyProbabilities::from(0.3, 0.2),
                                                 HierarchyProbabilities::from(0.05, 0.20)};
    std::vector<double> deltas = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t samples = 200'000;
    std::size_t grid_points = 101;
    std::uint64_t seed = 0;
};

TheoryReport verify_theory(const TheoryCheckConfig & config = {});

}  // namespace absorb
