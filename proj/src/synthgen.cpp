#include "absorb/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace absorb {

namespace {

bool is_probability(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

void require_spec(bool ok, const std::string & what) {
    if (!ok) {
        throw SpecError(what);
    }
}

}  // namespace

FeatureDictionary make_dictionary(std::size_t dim, std::size_t count, std::uint64_t seed) {
    if (dim == 0 || count == 0) {
        throw DimensionError("dictionary needs dim >= 1 and count >= 1");
    }
    if (count > dim) {
        throw DimensionError("cannot fit " + std::to_string(count) + " orthogonal features in R^" +
                             std::to_string(dim));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    FeatureDictionary dict{dim, count, Matrix(count, dim), seed};
    Matrix & m = dict.directions;
    for (double & v : m.data()) {
        v = normal(rng);
    }
    // Two passes of modified Gram-Schmidt keep pairwise dots at rounding level.
    for (std::size_t i = 0; i < count; ++i) {
        auto ri = m.row(i);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < i; ++j) {
                const double proj = dot(ri, m.row(j));
                axpy(-proj, m.row(j), ri);
            }
            const double n = norm(ri);
            if (n < 1e-10) {
                throw DimensionError("degenerate draw while orthonormalizing dictionary");
            }
            for (double & v : ri) {
                v /= n;
            }
        }
    }
    return dict;
}

FeatureDictionary basis_dictionary(std::size_t dim, std::size_t count) {
    if (dim == 0 || count == 0 || count > dim) {
        throw DimensionError("basis dictionary needs 1 <= count <= dim");
    }
    FeatureDictionary dict{dim, count, Matrix(count, dim), 0};
    for (std::size_t i = 0; i < count; ++i) {
        dict.directions(i, i) = 1.0;
    }
    return dict;
}

FiringSpec FiringSpec::independent(std::vector<double> probs) {
    FiringSpec spec;
    const std::size_t n = probs.size();
    spec.base_prob = std::move(probs);
    spec.magnitude_mean.assign(n, 1.0);
    spec.magnitude_std.assign(n, 0.0);
    return spec;
}

const HierarchyEdge * FiringSpec::edge_for_child(std::size_t child) const {
    for (const auto & e : hierarchy) {
        if (e.child == child) {
            return &e;
        }
    }
    return nullptr;
}

void FiringSpec::validate() const {
    const std::size_t n = size();
    require_spec(n > 0, "firing spec has no features");
    require_spec(magnitude_mean.size() == n && magnitude_std.size() == n,
                 "firing spec magnitude vectors do not match base_prob length");
    for (std::size_t i = 0; i < n; ++i) {
        require_spec(is_probability(base_prob[i]), "base_prob[" + std::to_string(i) + "] not in [0,1]");
        require_spec(std::isfinite(magnitude_mean[i]) && magnitude_mean[i] > 0.0,
                     "magnitude_mean[" + std::to_string(i) + "] must be positive");
        require_spec(std::isfinite(magnitude_std[i]) && magnitude_std[i] >= 0.0,
                     "magnitude_std[" + std::to_string(i) + "] must be nonnegative");
    }
    std::vector<int> seen_child(n, 0);
    for (const auto & e : hierarchy) {
        require_spec(e.parent < n && e.child < n, "hierarchy edge references unknown feature");
        require_spec(e.parent != e.child, "hierarchy edge is a self loop");
        require_spec(is_probability(e.cond_prob_given_parent) && is_probability(e.prob_without_parent),
                     "hierarchy probabilities not in [0,1]");
        require_spec(seen_child[e.child]++ == 0,
                     "feature " + std::to_string(e.child) + " is a child in more than one edge");
    }
    (void) topological_order();
}

std::vector<std::size_t> FiringSpec::topological_order() const {
    const std::size_t n = size();
    std::vector<int> parent(n, -1);
    for (const auto & e : hierarchy) {
        parent[e.child] = static_cast<int>(e.parent);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    std::vector<int> state(n, 0);
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t start = 0; start < n; ++start) {
        std::vector<std::size_t> chain;
        std::size_t cur = start;
        for (;;) {
            if (state[cur] == 2) {
                break;
            }
            if (state[cur] == 1) {
                throw SpecError("hierarchy contains a cycle");
            }
            state[cur] = 1;
            chain.push_back(cur);
            if (parent[cur] < 0) {
                break;
            }
            cur = static_cast<std::size_t>(parent[cur]);
        }
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
            state[*it] = 2;
            order.push_back(*it);
        }
    }
    return order;
}

std::vector<double> FiringSpec::marginal_rates() const {
    std::vector<double> rate(size(), 0.0);
    for (std::size_t f : topological_order()) {
        if (const auto * e = edge_for_child(f)) {
            const double p = rate[e->parent];
            rate[f] = p * e->cond_prob_given_parent + (1.0 - p) * e->prob_without_parent;
        } else {
            rate[f] = base_prob[f];
        }
    }
    return rate;
}

double conditional_from_overall(double overall, double parent_rate) {
    require_spec(parent_rate > 0.0, "parent never fires");
    const double cond = overall / parent_rate;
    require_spec(is_probability(cond), "overall child rate exceeds parent rate");
    return cond;
}

void FiringSpec::add_strict_child(std::size_t parent, std::size_t child, double overall_rate) {
    const double parent_rate = marginal_rates().at(parent);
    hierarchy.push_back({parent, child, conditional_from_overall(overall_rate, parent_rate), 0.0});
    base_prob.at(child) = 0.0;
}

std::vector<std::size_t> ActivationBatch::rows_in(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == which) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<Split> assign_split(std::size_t n, std::uint64_t seed) {
    const auto n_test = static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n)));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, 0x5b17));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Split> tags(n, Split::train);
    for (std::size_t i = 0; i < n_test; ++i) {
        tags[perm[i]] = Split::test;
    }
    return tags;
}

FeatureSampler::FeatureSampler(const FeatureDictionary & dict, const FiringSpec & spec, std::uint64_t seed)
    : dict_(dict), spec_(spec), rng_(seed) {
    spec_.validate();
    require_shape(spec_.size() == dict.count, "firing spec size does not match dictionary feature count");
    order_ = spec_.topological_order();
    parent_of_.assign(spec_.size(), -1);
    for (const auto & e : spec_.hierarchy) {
        parent_of_[e.child] = static_cast<int>(e.parent);
    }
}

double FeatureSampler::draw_magnitude(std::size_t feature) {
    const double mean = spec_.magnitude_mean[feature];
    const double sd = spec_.magnitude_std[feature];
    if (sd == 0.0) {
        return mean;
    }
    std::normal_distribution<double> normal(mean, sd);
    for (;;) {
        const double m = normal(rng_);
        if (m > 0.0) {
            return m;
        }
    }
}

void FeatureSampler::draw(std::span<double> firings, std::span<double> activation,
                          std::span<const signed char> forced) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::fill(firings.begin(), firings.end(), 0.0);
    std::fill(activation.begin(), activation.end(), 0.0);
    for (std::size_t f : order_) {
        bool fires = false;
        if (!forced.empty() && forced[f] >= 0) {
            fires = forced[f] == 1;
        } else {
            double p = spec_.base_prob[f];
            if (parent_of_[f] >= 0) {
                const auto * e = spec_.edge_for_child(f);
                p = firings[e->parent] > 0.0 ? e->cond_prob_given_parent : e->prob_without_parent;
            }
            fires = unit(rng_) < p;
        }
        if (fires) {
            firings[f] = draw_magnitude(f);
        }
    }
    for (std::size_t f = 0; f < firings.size(); ++f) {
        if (firings[f] != 0.0) {
            axpy(firings[f], dict_.feature(f), activation);
        }
    }
    ++stream_index_;
}

Matrix FeatureSampler::draw_activations(std::size_t n, Matrix * firings) {
    Matrix acts(n, dict_.dim);
    std::vector<double> local(dict_.count);
    if (firings != nullptr) {
        *firings = Matrix(n, dict_.count);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::span<double> f = firings != nullptr ? firings->row(i) : std::span<double>(local);
        draw(f, acts.row(i));
    }
    return acts;
}

ActivationBatch sample_batch(const FeatureDictionary & dict, const FiringSpec & spec, std::size_t n,
                             std::uint64_t seed) {
    if (n == 0) {
        throw std::invalid_argument("sample_batch: n must be positive");
    }
    FeatureSampler sampler(dict, spec, seed);
    ActivationBatch batch;
    batch.activations = sampler.draw_activations(n, &batch.firings);
    batch.split = assign_split(n, seed);
    return batch;
}

void ClassTask::validate(const FiringSpec & spec) const {
    require_spec(classes >= 1, "class task needs at least one class");
    require_spec(classes <= spec.size(), "more classes than features");
    require_spec(class_weights.empty() || class_weights.size() == classes, "class_weights length mismatch");
    double total = 0.0;
    for (double w : class_weights) {
        require_spec(std::isfinite(w) && w >= 0.0, "class weights must be nonnegative");
        total += w;
    }
    require_spec(class_weights.empty() || total > 0.0, "class weights allow rows with no class feature");
    require_spec(sub_features.empty() || sub_features.size() == classes, "sub_features length mismatch");

    std::vector<int> owned(spec.size(), 0);
    for (std::size_t c = 0; c < classes; ++c) {
        owned[c] = 1;
        require_spec(spec.base_prob[c] == 0.0 && spec.edge_for_child(c) == nullptr,
                     "class feature " + std::to_string(c) +
                         " can fire on its own, allowing two class features in one row");
    }
    for (std::size_t c = 0; c < sub_features.size(); ++c) {
        double mass = 0.0;
        for (const auto & s : sub_features[c]) {
            require_spec(s.feature < spec.size(), "sub-feature index out of range");
            require_spec(owned[s.feature]++ == 0, "sub-feature " + std::to_string(s.feature) +
                                                      " is already a class or sub-feature");
            require_spec(spec.base_prob[s.feature] == 0.0 && spec.edge_for_child(s.feature) == nullptr,
                         "sub-feature " + std::to_string(s.feature) + " can fire outside its class");
            require_spec(is_probability(s.prob), "sub-feature probability not in [0,1]");
            mass += s.prob;
        }
        require_spec(mass <= 1.0 + 1e-12, "sub-feature probabilities of a class exceed 1");
    }
}

namespace {

std::discrete_distribution<std::size_t> class_distribution(const ClassTask & task) {
    std::vector<double> weights = task.class_weights;
    if (weights.empty()) {
        weights.assign(task.classes, 1.0);
    }
    return {weights.begin(), weights.end()};
}

}  // namespace

// Class and sub-feature firing is decided per row here and forced into the
// feature sampler, so hierarchy children of those features still see their
// parent.
TaskSampler::TaskSampler(const FeatureDictionary & dict, const FiringSpec & spec, const ClassTask & task,
                         std::uint64_t seed)
    : dict_(dict),
      task_(task),
      features_(dict, spec, derive_seed(seed, 1)),
      rng_(derive_seed(seed, 2)),
      pick_class_((task.validate(spec), class_distribution(task))),
      forced_(dict.count, -1) {
    for (std::size_t c = 0; c < task_.classes; ++c) {
        forced_[c] = 0;
    }
    for (const auto & subs : task_.sub_features) {
        for (const auto & s : subs) {
            forced_[s.feature] = 0;
        }
    }
}

int TaskSampler::draw(std::span<double> firings, std::span<double> activation) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t cls = pick_class_(rng_);
    std::vector<signed char> row_forced = forced_;
    row_forced[cls] = 1;
    if (!task_.sub_features.empty()) {
        double u = unit(rng_);
        for (const auto & s : task_.sub_features[cls]) {
            if (u < s.prob) {
                row_forced[s.feature] = 1;
                break;
            }
            u -= s.prob;
        }
    }
    features_.draw(firings, activation, row_forced);
    return static_cast<int>(cls);
}

Matrix TaskSampler::draw_activations(std::size_t n, Matrix * firings) {
    Matrix acts(n, dict_.dim);
    std::vector<double> local(dict_.count);
    if (firings != nullptr) {
        *firings = Matrix(n, dict_.count);
    }
    for (std::size_t i = 0; i < n; ++i) {
        draw(firings != nullptr ? firings->row(i) : std::span<double>(local), acts.row(i));
    }
    return acts;
}

ActivationBatch make_labeled_task(const FeatureDictionary & dict, const FiringSpec & spec,
                                  const ClassTask & task, std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw std::invalid_argument("make_labeled_task: n must be positive");
    }
    spec.validate();
    require_shape(spec.size() == dict.count, "firing spec size does not match dictionary feature count");
    TaskSampler sampler(dict, spec, task, seed);

    ActivationBatch batch;
    batch.activations = Matrix(n, dict.dim);
    batch.firings = Matrix(n, dict.count);
    batch.labels = std::vector<int>(n);
    for (std::size_t i = 0; i < n; ++i) {
        (*batch.labels)[i] = sampler.draw(batch.firings.row(i), batch.activations.row(i));
    }
    batch.split = assign_split(n, seed);
    return batch;
}

ActivationBatch make_labeled_task(const FeatureDictionary & dict, const FiringSpec & spec,
                                  std::size_t classes, std::size_t n, std::uint64_t seed) {
    ClassTask task;
    task.classes = classes;
    return make_labeled_task(dict, spec, task, n, seed);
}

std::vector<int> labels_from_feature(const ActivationBatch & batch, std::size_t feature) {
    require_shape(feature < batch.firings.cols(), "labels_from_feature: feature out of range");
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        labels[i] = batch.firings(i, feature) > 0.0 ? 0 : 1;
    }
    return labels;
}

}  // namespace absorb
