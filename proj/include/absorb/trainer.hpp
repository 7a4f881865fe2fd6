#pragma once

// Mini-batch Adam training of SAEs on freshly sampled synthetic activations.

#include "absorb/sae.hpp"
#include "absorb/synthgen.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace absorb {

enum class DecoderNorm { none, unit_renorm_each_step };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamParams &) const = default;
};

struct TrainConfig {
    // Tuned for the 2M-sample toy runs; the 100M-sample regime used 3e-5.
    double l1_coeff = 3e-3;
    double learning_rate = 3e-4;
    std::size_t total_samples = 2'000'000;
    std::size_t batch_size = 32;
    AdamParams adam;
    DecoderNorm decoder_norm = DecoderNorm::unit_renorm_each_step;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 500;  // steps

    void validate() const;
    bool operator==(const TrainConfig &) const = default;
};

struct SaeShape {
    std::size_t width = 4;
    Nonlinearity nonlinearity = Nonlinearity::relu();

    bool operator==(const SaeShape &) const = default;
};

struct Checkpoint {
    std::size_t step = 0;
    std::uint64_t samples_seen = 0;
    LossReport report;
};

struct TrainTrace {
    std::vector<Checkpoint> checkpoints;
    SaeModel model;
    std::size_t steps = 0;
    std::uint64_t samples_seen = 0;
    double wall_seconds = 0.0;  // informational, never persisted
};

// Raised when the loss stops being finite; carries the trace so far.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string & what, TrainTrace trace)
        : std::runtime_error(what), trace(std::move(trace)) {}
    TrainTrace trace;
};

struct SaeGradients {
    Matrix w_enc;
    std::vector<double> b_enc;
    Matrix w_dec;
    std::vector<double> b_dec;
};

// Analytic gradient of compute_loss(...).total with respect to every parameter.
SaeGradients loss_gradients(const SaeModel & model, const Matrix & inputs, double l1_coeff);

// Encoder initialized N(0, (0.1/sqrt(d))^2), decoder rows equal to encoder
// rows, zero biases.
SaeModel init_sae(std::size_t dim, const SaeShape & shape, std::uint64_t seed);

// Digest string recorded as SaeModel::provenance.
std::string train_provenance(const FeatureDictionary & dict, const FiringSpec & spec, const SaeShape & shape,
                             const TrainConfig & config);

// Adam on freshly drawn batches. Init uses derive_seed(seed, 0) and the data
// stream derive_seed(seed, 1).
TrainTrace train(const FeatureDictionary & dict, const FiringSpec & spec, const SaeShape & shape,
                 const TrainConfig & config);
// Same, with rows drawn from a class task.
TrainTrace train_on_task(const FeatureDictionary & dict, const FiringSpec & spec, const ClassTask & task,
                         const SaeShape & shape, const TrainConfig & config);
TrainTrace train_stream(SampleStream & stream, std::size_t dim, const SaeShape & shape, const TrainConfig & config,
                        const std::string & provenance);

// Max relative error between analytic gradients and central differences
// (step 1e-6) over `probe_points` randomly chosen parameters. Parameters whose
// perturbation moves any pre-activation across a ReLU kink (or changes the
// BatchTopK selection) are skipped and replaced by another draw.
double grad_check(const SaeModel & model, const Matrix & inputs, double l1_coeff, std::size_t probe_points,
                  std::uint64_t seed = 0);

}  // namespace absorb
