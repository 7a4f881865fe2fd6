#pragma once

// Absorption and splitting diagnostics over a linear readout. The readout is a
// multinomial probe on raw activations; every intervention decodes latents and
// adds the SAE error term back before the readout sees it.

#include "absorb/probes.hpp"
#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace absorb {

// Entry (i, j) = cos(a_i, b_j); zero rows give 0.
Matrix cosine_map(const Matrix & a, const Matrix & b);

enum class MetricVariant { mean, max };

// g[y] minus the mean (or max) of the other logits.
double metric_m(std::span<const double> logits, std::size_t y, MetricVariant variant);

// Effect of zeroing one latent: m(baseline) - m(ablated), both computed on
// decode(z) + error with the same error term.
double ablate_latent(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                     std::size_t latent, std::size_t y, MetricVariant variant);

struct AblationSweep {
    std::vector<double> latents;  // z for this row
    std::vector<double> effects;  // one per latent
    double baseline = 0.0;
};

AblationSweep ablation_sweep(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                             std::size_t y, MetricVariant variant);

// Effect of zeroing every latent at once.
double ablate_all(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                  std::size_t y, MetricVariant variant);

struct SplitResult {
    std::size_t cls = 0;
    std::size_t split_k = 1;
    std::vector<std::size_t> latents;  // the k-sparse selection at split_k
    std::vector<double> f1_by_k;       // F1(1) .. F1(split_k + 1) as scanned
};

struct SplitSettings {
    double tau_split = 0.03;
    KSparseSettings probing;

    bool operator==(const SplitSettings &) const = default;
};

// Scans k = 1, 2, ... and stops at the first step whose F1 gain is <= tau.
std::vector<SplitResult> detect_splitting(const Matrix & latents, std::span<const int> labels,
                                          std::span<const Split> split, const SplitSettings & settings = {});

struct AltMetricConfig {
    double tau_c = 0.5;
    double tau_m = 0.0;
    std::size_t n_absorbers = 1;
    std::size_t n_main = 0;  // 0: use split_k

    bool operator==(const AltMetricConfig &) const = default;
};

struct AbsorptionConfig {
    double tau_split = 0.03;
    double tau_cos = 0.025;
    double ablation_lead = 1.0;
    std::size_t fn_sample_cap = 200;
    MetricVariant variant = MetricVariant::mean;
    std::optional<AltMetricConfig> alt;
    KSparseSettings probing;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const AbsorptionConfig &) const = default;
};

struct SampleVerdict {
    std::size_t sample = 0;  // row in the batch
    std::size_t top_latent = 0;
    double top_effect = 0.0;
    double runner_up_effect = 0.0;
    double cosine = 0.0;               // probe vs decoder row of top_latent
    double projection_fraction = 0.0;  // absorber share of the probe projection
    double main_fraction = 0.0;        // split latents' share of the probe projection
    bool absorption = false;

    bool operator==(const SampleVerdict &) const = default;
};

struct ClassAbsorption {
    std::size_t cls = 0;
    std::size_t split_k = 0;
    std::vector<std::size_t> split_latents;
    std::size_t true_positives = 0;  // LR-probe true positives on the test split
    std::size_t audited_pool = 0;    // false negatives (main) or true positives (alt)
    std::size_t sampled = 0;
    std::size_t absorption_count = 0;  // among sampled
    double absorption_estimate = 0.0;  // extrapolated to the whole pool
    std::optional<double> rate;        // absent without true positives
    std::size_t skipped_nonpositive = 0;
    std::vector<SampleVerdict> verdicts;

    bool operator==(const ClassAbsorption &) const = default;
};

struct AbsorptionReport {
    std::string metric;  // "main" or "alt"
    AbsorptionConfig config;
    std::vector<ClassAbsorption> classes;

    // Mean rate over classes where it is defined.
    std::optional<double> mean_rate() const;
    bool operator==(const AbsorptionReport &) const = default;
};

// Per class: split latents, then false negatives (test rows the LR probe gets
// right while every split latent is <= 0), sampled down to fn_sample_cap, each
// audited by a full ablation sweep.
AbsorptionReport absorption_rate_main(const SaeModel & sae, const ProbeModel & readout, const ProbeModel & probe,
                                      const ActivationBatch & batch, const AbsorptionConfig & config);

// Projection variant: every LR-probe true positive is scored by how much of
// a . d_p the non-split latents carry versus the split latents.
AbsorptionReport absorption_rate_alt(const SaeModel & sae, const ProbeModel & probe, const ActivationBatch & batch,
                                     const AbsorptionConfig & config);

// Same as above, reusing a splitting result.
AbsorptionReport absorption_rate_main(const SaeModel & sae, const ProbeModel & readout, const ProbeModel & probe,
                                      const ActivationBatch & batch, const AbsorptionConfig & config,
                                      const std::vector<SplitResult> & splits);
AbsorptionReport absorption_rate_alt(const SaeModel & sae, const ProbeModel & probe, const ActivationBatch & batch,
                                     const AbsorptionConfig & config, const std::vector<SplitResult> & splits);

struct EditResult {
    double drop_from = 0.0;  // p_from before - after
    double gain_to = 0.0;    // p_to after - before
};

// Zeroes the from-class latent, sets the to-class latent to its class mean,
// decodes with the error term and compares readout softmax probabilities.
EditResult edit_class(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                      std::size_t from_class, std::size_t to_class, std::span<const std::size_t> class_latent,
                      std::span<const double> mean_acts);

// Mean activation of class_latent[c] over train rows labeled c on which it
// fires. 0 when it never does.
std::vector<double> class_mean_activations(const Matrix & latents, std::span<const int> labels,
                                           std::span<const Split> split, std::span<const std::size_t> class_latent);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace absorb
