#pragma once

// Shipped experiments, the end-to-end pipeline behind them, and sweeps.

#include "absorb/analysis.hpp"
#include "absorb/io.hpp"
#include "absorb/probes.hpp"
#include "absorb/synthgen.hpp"
#include "absorb/theory.hpp"
#include "absorb/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace absorb {

// Bad scenario name, axis, flag combination or output location. Exit code 2.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class DictionaryKind { random, basis };
enum class SaeSource { trained, delta_construction };

struct ExperimentConfig {
    std::string scenario;  // shipped name, or "custom"
    std::uint64_t seed = 0;

    std::size_t dim = 50;
    DictionaryKind dictionary = DictionaryKind::random;
    std::uint64_t dictionary_seed = 0;
    FiringSpec spec;
    std::optional<ClassTask> task;  // absent: binary labels from label_feature
    std::size_t label_feature = 0;
    std::size_t eval_samples = 20'000;
    std::uint64_t eval_seed = 100;

    SaeSource sae_source = SaeSource::trained;
    SaeShape shape;
    TrainConfig train;
    // delta_construction only
    double delta = 1.0;
    std::size_t parent = 0;
    std::vector<std::size_t> children;

    ProbeConfig probe;    // one-vs-rest LR probe on raw activations
    ProbeConfig readout;  // multinomial readout
    AbsorptionConfig absorption;

    // theory-verify only
    TheoryCheckConfig theory;

    // Points every derived seed at `s`.
    void apply_seed(std::uint64_t s);
    void validate() const;
};

void to_json(json & j, const ExperimentConfig & c);
// Overlays the keys present in j onto c.
void from_json(const json & j, ExperimentConfig & c);

const std::vector<std::string> & scenario_names();
// Throws UsageError for an unknown name.
ExperimentConfig make_scenario(const std::string & name, std::uint64_t seed = 0);
// A persisted config. When its "scenario" names a shipped scenario, the file
// is overlaid on that scenario's defaults.
ExperimentConfig load_experiment(const std::filesystem::path & path);

struct Assertion {
    std::string name;
    double value = 0.0;
    std::string op;  // ">=", "<=", ">", "<", "=="
    double threshold = 0.0;
    bool pass = false;
};

struct ScenarioResult {
    std::string scenario;
    std::vector<Assertion> assertions;
    json metrics;

    bool pass() const;
};

// Everything the pipeline computes for one config, before scenario checks.
struct PipelineRun {
    FeatureDictionary dict;
    std::optional<TrainTrace> trace;
    SaeModel sae;
    ActivationBatch eval;
    std::vector<int> labels;
    SaeActivations acts;
    LossReport loss;
    ProbeModel probe;
    ProbeModel readout;
    EvalReport probe_eval;
    std::vector<SplitResult> splits;
    AbsorptionReport absorption;
    std::optional<AbsorptionReport> absorption_alt;
    Matrix decoder_cos;  // latent x feature
    Matrix encoder_cos;
};

FeatureDictionary build_dictionary(const ExperimentConfig & config);
PipelineRun run_pipeline(const ExperimentConfig & config);

// Writes artifacts into out_dir (created if needed). Throws UsageError when it
// cannot be written.
ScenarioResult run_scenario(const ExperimentConfig & config, const std::filesystem::path & out_dir);

enum class SweepAxis { l1_coeff, width, k, delta };

SweepAxis parse_axis(const std::string & name);
std::string axis_name(SweepAxis axis);

struct SweepSpec {
    ExperimentConfig base;
    SweepAxis axis = SweepAxis::l1_coeff;
    std::vector<double> values;

    // Nonempty grid and an axis the base scenario can vary.
    void validate() const;
};

struct SweepPoint {
    double value = 0.0;
    std::uint64_t seed = 0;
    std::optional<std::string> error;
    double l0 = 0.0;
    double explained_variance = 0.0;
    double mean_f1 = 0.0;  // k = 1 sparse probe over latents
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    std::optional<double> absorption_rate;
    std::size_t absorption_count = 0;
    std::size_t false_negatives = 0;
    std::size_t split_total = 0;  // sum of split_k over classes
};

// One pipeline run per grid value with seed derive_seed(base.seed, index).
// Each point is written to out_dir/point_<i>.json as soon as it finishes and
// sweep.csv is rewritten after every point, so a failure keeps the rows so far.
std::vector<SweepPoint> run_sweep(const SweepSpec & spec, const std::filesystem::path & out_dir);

std::string sweep_csv(SweepAxis axis, const std::vector<SweepPoint> & points);

}  // namespace absorb
