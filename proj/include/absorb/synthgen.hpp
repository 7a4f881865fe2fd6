#pragma once

// Ground-truth feature dictionaries and synthetic activation batches.

#include "absorb/matrix.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace absorb {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A FiringSpec (or class task) that cannot produce the requested process.
struct SpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// `count` orthonormal feature directions in R^dim, one per row.
struct FeatureDictionary {
    std::size_t dim = 0;
    std::size_t count = 0;
    Matrix directions;
    std::uint64_t seed = 0;

    std::span<const double> feature(std::size_t i) const { return directions.row(i); }
};

// Seeded standard-normal draws, orthonormalized by Gram-Schmidt in row order.
FeatureDictionary make_dictionary(std::size_t dim, std::size_t count, std::uint64_t seed);

// First `count` standard basis vectors. Dot products between sums of these are
// exact, which constructed worlds rely on when a pre-activation must be 0.
FeatureDictionary basis_dictionary(std::size_t dim, std::size_t count);

// child fires with cond_prob_given_parent when the parent fired in the same
// sample, otherwise with prob_without_parent. A strict hierarchy (child
// implies parent) has prob_without_parent == 0.
struct HierarchyEdge {
    std::size_t parent = 0;
    std::size_t child = 0;
    double cond_prob_given_parent = 0.0;
    double prob_without_parent = 0.0;

    bool operator==(const HierarchyEdge &) const = default;
};

struct FiringSpec {
    // Firing probability of root features. Ignored for hierarchy children.
    std::vector<double> base_prob;
    std::vector<HierarchyEdge> hierarchy;
    std::vector<double> magnitude_mean;
    std::vector<double> magnitude_std;

    // Independent features, magnitude exactly 1.
    static FiringSpec independent(std::vector<double> probs);

    std::size_t size() const { return base_prob.size(); }

    // Throws SpecError on bad probabilities, cycles, or a child with two parents.
    void validate() const;

    // Parents before children.
    std::vector<std::size_t> topological_order() const;

    // Analytic marginal firing rate of every feature.
    std::vector<double> marginal_rates() const;

    const HierarchyEdge * edge_for_child(std::size_t child) const;

    // Adds a strict parent -> child edge whose overall child rate is
    // `overall_rate`, i.e. cond = overall / p(parent).
    void add_strict_child(std::size_t parent, std::size_t child, double overall_rate);

    bool operator==(const FiringSpec &) const = default;
};

// Conditional child probability that yields `overall` given the parent rate.
double conditional_from_overall(double overall, double parent_rate);

enum class Split : std::uint8_t { train, test };

struct ActivationBatch {
    Matrix activations;  // N x d
    Matrix firings;      // N x D, magnitude or 0
    std::optional<std::vector<int>> labels;
    std::vector<Split> split;

    std::size_t size() const { return activations.rows(); }
    std::vector<std::size_t> rows_in(Split which) const;
    bool operator==(const ActivationBatch &) const = default;
};

// Fraction of rows tagged as test.
inline constexpr double kTestFraction = 0.2;

// Deterministic 80/20 split tags for n rows.
std::vector<Split> assign_split(std::size_t n, std::uint64_t seed);

// A source of fresh activation rows. The stream index counts rows drawn so
// far and only grows, so consumers can assert that data is never reused.
class SampleStream {
public:
    virtual ~SampleStream() = default;

    // Fills n rows of fresh activations; firings are written too if non-null.
    virtual Matrix draw_activations(std::size_t n, Matrix * firings = nullptr) = 0;
    virtual std::uint64_t stream_index() const = 0;
};

// Streams samples from (dict, spec).
class FeatureSampler : public SampleStream {
public:
    FeatureSampler(const FeatureDictionary & dict, const FiringSpec & spec, std::uint64_t seed);

    // Writes firing magnitudes into `firings` (length D) and the activation
    // into `activation` (length d). `forced`, when given, pins features on (1)
    // or off (0); -1 leaves a feature to the spec.
    void draw(std::span<double> firings, std::span<double> activation,
              std::span<const signed char> forced = {});

    Matrix draw_activations(std::size_t n, Matrix * firings = nullptr) override;
    std::uint64_t stream_index() const override { return stream_index_; }

private:
    double draw_magnitude(std::size_t feature);

    const FeatureDictionary & dict_;
    FiringSpec spec_;
    std::vector<std::size_t> order_;
    std::vector<int> parent_of_;
    std::mt19937_64 rng_;
    std::uint64_t stream_index_ = 0;
};

ActivationBatch sample_batch(const FeatureDictionary & dict, const FiringSpec & spec, std::size_t n,
                             std::uint64_t seed);

// One exclusive sub-feature option of a class. At most one sub-feature of a
// class fires per row; with probability 1 - sum(prob) none does.
struct SubFeature {
    std::size_t feature = 0;
    double prob = 0.0;

    bool operator==(const SubFeature &) const = default;
};

// Class c is owned by feature c. Exactly one class feature fires per row.
struct ClassTask {
    std::size_t classes = 2;
    std::vector<double> class_weights;              // empty: uniform
    std::vector<std::vector<SubFeature>> sub_features;  // per class, may be empty

    void validate(const FiringSpec & spec) const;
    bool operator==(const ClassTask &) const = default;
};

// Streams rows of a class task: one class per row, then at most one of its
// sub-features, with the remaining features drawn from the spec.
class TaskSampler : public SampleStream {
public:
    TaskSampler(const FeatureDictionary & dict, const FiringSpec & spec, const ClassTask & task,
                std::uint64_t seed);

    // Returns the class label of the drawn row.
    int draw(std::span<double> firings, std::span<double> activation);

    Matrix draw_activations(std::size_t n, Matrix * firings = nullptr) override;
    std::uint64_t stream_index() const override { return features_.stream_index(); }

private:
    const FeatureDictionary & dict_;
    ClassTask task_;
    FeatureSampler features_;
    std::mt19937_64 rng_;
    std::discrete_distribution<std::size_t> pick_class_;
    std::vector<signed char> forced_;
};

ActivationBatch make_labeled_task(const FeatureDictionary & dict, const FiringSpec & spec,
                                  const ClassTask & task, std::size_t n, std::uint64_t seed);
ActivationBatch make_labeled_task(const FeatureDictionary & dict, const FiringSpec & spec,
                                  std::size_t classes, std::size_t n, std::uint64_t seed);

// Binary labels from a single feature: 0 where it fires, 1 otherwise.
std::vector<int> labels_from_feature(const ActivationBatch & batch, std::size_t feature);

}  // namespace absorb
