#pragma once

// Logistic-regression probes with an optional L1 penalty, k-sparse probing
// and confusion-matrix evaluation on the test split.

#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace absorb {

struct ProbeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class ProbeKind { one_vs_rest, multinomial };

struct ProbeConfig {
    ProbeKind kind = ProbeKind::one_vs_rest;
    double l1_coeff = 0.0;
    std::size_t max_iter = 400;
    double tolerance = 1e-8;  // on the proximal-gradient step norm

    bool operator==(const ProbeConfig &) const = default;
};

struct ProbeModel {
    ProbeKind kind = ProbeKind::one_vs_rest;
    Matrix weights;  // C x M
    std::vector<double> bias;
    double l1_coeff = 0.0;
    // Per class, the coordinates a k-sparse probe may use.
    std::optional<std::vector<std::vector<std::size_t>>> feature_mask;
    std::size_t iterations = 0;

    std::size_t classes() const { return weights.rows(); }
    std::size_t inputs() const { return weights.cols(); }

    std::vector<double> logits(std::span<const double> x) const;
    Matrix logits(const Matrix & x) const;
    // Argmax of the logits, ties to the lower class.
    int predict(std::span<const double> x) const;
    // One-vs-rest decision for class c: logit > 0. Multinomial: argmax == c.
    bool fires(std::span<const double> x, std::size_t c) const;

    void validate() const;
    bool operator==(const ProbeModel &) const = default;
};

// Trains on rows tagged train. Labels are class ids in [0, classes).
// `classes` = 0 infers max label + 1.
ProbeModel train_probe(const Matrix & inputs, std::span<const int> labels, std::span<const Split> split,
                       const ProbeConfig & config, std::size_t classes = 0);

// One-vs-rest only: class c sees just the columns in mask[c].
ProbeModel train_masked_probe(const Matrix & inputs, std::span<const int> labels, std::span<const Split> split,
                              const std::vector<std::vector<size_t>> & mask, const ProbeConfig & config);

// magnitude: largest |weight| first. positive: largest signed weight first,
// so coordinates that argue against the class come last.
enum class KSelection { magnitude, positive };

// Per class, the k selected coordinates, strongest first, ties to the lower
// index.
std::vector<std::vector<std::size_t>> select_k_sparse(const ProbeModel & probe, std::size_t k,
                                                      KSelection mode = KSelection::magnitude);
std::vector<std::size_t> select_k_sparse(const ProbeModel & probe, std::size_t cls, std::size_t k,
                                         KSelection mode = KSelection::magnitude);

struct ClassEval {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    static ClassEval from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
};

struct EvalReport {
    std::vector<ClassEval> per_class;
    double mean_f1 = 0.0;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    std::size_t test_rows = 0;
};

// Test split only. Throws ProbeError when there are no test rows.
EvalReport evaluate(const ProbeModel & probe, const Matrix & inputs, std::span<const int> labels,
                    std::span<const Split> split);

// A single latent used as a classifier for `cls`: fires when value > threshold.
ClassEval evaluate_latent(const Matrix & latents, std::size_t latent, std::span<const int> labels,
                          std::span<const Split> split, int cls, double threshold = 0.0);

struct KSparsePoint {
    std::size_t k = 0;
    double mean_f1 = 0.0;
    std::vector<double> f1;  // per class
    std::vector<std::vector<std::size_t>> mask;
};

struct KSparseSettings {
    std::size_t k_max = 15;
    double l1_coeff = 0.01;
    // With few classes an L1 probe leans on other classes' latents with
    // negative weight; ranking by signed weight keeps those out of small k.
    KSelection selection = KSelection::positive;
    ProbeConfig fit;  // kind and l1 ignored; one-vs-rest, unpenalized refits

    bool operator==(const KSparseSettings &) const = default;
};

std::vector<KSparsePoint> k_sparse_curve(const Matrix & latents, std::span<const int> labels,
                                         std::span<const Split> split, const KSparseSettings & settings = {});

// F1 of class `cls` for a refit unpenalized probe restricted to `columns`.
double masked_class_f1(const Matrix & latents, std::span<const int> labels, std::span<const Split> split,
                       std::size_t cls, std::span<const std::size_t> columns, const ProbeConfig & fit);

struct LatentMatch {
    std::size_t latent = 0;
    double cosine = 0.0;
};

// Per class, the encoder row with the highest cosine to the probe weights.
std::vector<LatentMatch> match_latents_to_probe(const SaeModel & sae, const ProbeModel & probe);

}  // namespace absorb
