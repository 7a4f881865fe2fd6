#include "absorb/scenarios.hpp"

#include "absorb/parallel.hpp"
#include "absorb/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

namespace absorb {

namespace fs = std::filesystem;

namespace {

const char * dictionary_tag(DictionaryKind k) { return k == DictionaryKind::basis ? "basis" : "random"; }
const char * source_tag(SaeSource s) { return s == SaeSource::delta_construction ? "delta_construction" : "trained"; }

FiringSpec hierarchical_spec() {
    auto spec = FiringSpec::independent({0.25, 0.0, 0.05, 0.05});
    spec.add_strict_child(0, 1, 0.05);
    return spec;
}

ExperimentConfig toy_base(const std::string & name) {
    ExperimentConfig c;
    c.scenario = name;
    c.dim = 50;
    c.shape = {4, Nonlinearity::relu()};
    c.absorption.alt = AltMetricConfig{};
    return c;
}

ExperimentConfig scenario_defaults(const std::string & name) {
    if (name == "toy-independent") {
        auto c = toy_base(name);
        c.spec = FiringSpec::independent({0.25, 0.05, 0.05, 0.05});
        return c;
    }
    if (name == "toy-hierarchical") {
        auto c = toy_base(name);
        c.spec = hierarchical_spec();
        return c;
    }
    if (name == "toy-partial") {
        auto c = toy_base(name);
        c.spec = hierarchical_spec();
        c.spec.magnitude_std[0] = std::sqrt(0.1);  // variance 0.1
        c.eval_samples = 50'000;
        return c;
    }
    if (name == "toy-imperfect") {
        // Child fires alongside the parent 95% of the time: overall 0.05,
        // 0.0475 with the parent and 0.0025 without it.
        auto c = toy_base(name);
        c.spec = FiringSpec::independent({0.25, 0.0, 0.05, 0.05});
        c.spec.hierarchy.push_back({0, 1, 0.0475 / 0.25, 0.0025 / 0.75});
        return c;
    }
    if (name == "toy-topk") {
        auto c = toy_base(name);
        std::vector<double> probs(12, 0.15);
        probs[0] = 0.4;
        probs[1] = 0.0;
        c.spec = FiringSpec::independent(probs);
        c.spec.hierarchy.push_back({0, 1, 0.6, 0.0});
        c.shape = {12, Nonlinearity::batch_topk(2)};
        c.train.batch_size = 128;
        c.train.learning_rate = 1e-3;
        return c;
    }
    if (name == "toy-splitting") {
        // Class 0 is carried by either of two exclusive sub-features.
        auto c = toy_base(name);
        c.spec = FiringSpec::independent(std::vector<double>(5, 0.0));
        ClassTask task;
        task.classes = 3;
        task.sub_features = {{{3, 0.5}, {4, 0.5}}, {}, {}};
        c.task = task;
        c.shape = {5, Nonlinearity::relu()};
        return c;
    }
    if (name == "absorption-world") {
        // Class 0 owns feature 0 and ten exclusive children at 0.02 each:
        // p11 = 0.25 * 0.2 = 0.05, p10 = 0.20.
        auto c = toy_base(name);
        c.dictionary = DictionaryKind::basis;
        c.spec = FiringSpec::independent(std::vector<double>(14, 0.0));
        ClassTask task;
        task.classes = 4;
        task.sub_features.assign(4, {});
        for (std::size_t f = 4; f < 14; ++f) {
            task.sub_features[0].push_back({f, 0.02});
            c.children.push_back(f);
        }
        c.task = task;
        c.sae_source = SaeSource::delta_construction;
        c.delta = 1.0;
        c.parent = 0;
        c.shape = {14, Nonlinearity::relu()};
        c.eval_samples = 100'000;
        c.readout.kind = ProbeKind::multinomial;
        return c;
    }
    if (name == "theory-verify") {
        ExperimentConfig c;
        c.scenario = name;
        return c;
    }
    throw UsageError("unknown scenario '" + name + "'");
}

std::size_t best_latent(const Matrix & cos, std::size_t feature, std::span<const std::size_t> exclude = {}) {
    std::size_t best = cos.rows();
    for (std::size_t i = 0; i < cos.rows(); ++i) {
        if (std::find(exclude.begin(), exclude.end(), i) != exclude.end()) {
            continue;
        }
        if (best == cos.rows() || cos(i, feature) > cos(best, feature)) {
            best = i;
        }
    }
    return best;
}

// Latent per feature maximizing the summed cosine, each latent used once.
std::vector<std::size_t> best_permutation(const Matrix & cos) {
    const std::size_t features = cos.cols();
    std::vector<std::size_t> latents(cos.rows());
    std::iota(latents.begin(), latents.end(), 0);
    std::vector<std::size_t> best;
    double best_score = -INFINITY;
    // Brute force over assignments; shipped scenarios have at most 12 latents
    // but only call this for the 4-latent toy.
    std::vector<std::size_t> current;
    std::vector<bool> used(cos.rows(), false);
    auto recurse = [&](auto & self, std::size_t f, double score) -> void {
        if (f == features) {
            if (score > best_score) {
                best_score = score;
                best = current;
            }
            return;
        }
        for (std::size_t l : latents) {
            if (!used[l]) {
                used[l] = true;
                current.push_back(l);
                self(self, f + 1, score + cos(l, f));
                current.pop_back();
                used[l] = false;
            }
        }
    };
    recurse(recurse, 0, 0.0);
    return best;
}

Assertion check(std::string name, double value, const std::string & op, double threshold) {
    bool pass = false;
    if (op == ">=") {
        pass = value >= threshold;
    } else if (op == "<=") {
        pass = value <= threshold;
    } else if (op == ">") {
        pass = value > threshold;
    } else if (op == "<") {
        pass = value < threshold;
    } else {
        pass = value == threshold;
    }
    return {std::move(name), value, op, threshold, pass};
}

struct RowFilter {
    std::size_t parent;
    std::size_t child;
    bool parent_on;
    bool child_on;
    bool test_only;
};

std::vector<std::size_t> rows_where(const ActivationBatch & b, const RowFilter & f) {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < b.size(); ++r) {
        if (f.test_only && b.split[r] != Split::test) {
            continue;
        }
        if ((b.firings(r, f.parent) > 0.0) == f.parent_on && (b.firings(r, f.child) > 0.0) == f.child_on) {
            out.push_back(r);
        }
    }
    return out;
}

double mean_latent(const Matrix & z, std::span<const std::size_t> rows, std::size_t latent) {
    if (rows.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (std::size_t r : rows) {
        s += z(r, latent);
    }
    return s / static_cast<double>(rows.size());
}

std::vector<std::string> labels(const char * prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(prefix + std::to_string(i));
    }
    return out;
}

// Each feature alone, then for every hierarchy edge the pair at parent
// magnitudes 1.0, 0.9 and 0.75.
Matrix firing_examples(const FeatureDictionary & dict, const FiringSpec & spec, const SaeModel & sae) {
    std::vector<std::vector<double>> firings;
    for (std::size_t f = 0; f < dict.count; ++f) {
        std::vector<double> row(dict.count, 0.0);
        row[f] = 1.0;
        firings.push_back(row);
    }
    for (const auto & e : spec.hierarchy) {
        for (double m : {1.0, 0.9, 0.75}) {
            std::vector<double> row(dict.count, 0.0);
            row[e.parent] = m;
            row[e.child] = 1.0;
            firings.push_back(row);
        }
    }
    const Matrix f = Matrix::from_rows(firings);
    const Matrix z = encode(sae, matmul(f, dict.directions));
    Matrix out(f.rows(), f.cols() + z.cols());
    for (std::size_t r = 0; r < f.rows(); ++r) {
        std::copy(f.row(r).begin(), f.row(r).end(), out.row(r).begin());
        std::copy(z.row(r).begin(), z.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(f.cols()));
    }
    return out;
}

json class_rates(const AbsorptionReport & rep) {
    json j = json::array();
    for (const auto & c : rep.classes) {
        j.push_back(c.rate ? json(*c.rate) : json(nullptr));
    }
    return j;
}

// Absorption signature between the parent and child of the first edge.
void hierarchy_assertions(const ExperimentConfig & cfg, const PipelineRun & run, ScenarioResult & res,
                          bool full_signature) {
    const auto & edge = cfg.spec.hierarchy.at(0);
    const std::size_t p = edge.parent, c = edge.child;
    const std::size_t parent_latent = best_latent(run.decoder_cos, p);
    const std::size_t excl[] = {parent_latent};
    const std::size_t child_latent = best_latent(run.decoder_cos, c, excl);
    res.metrics["parent_latent"] = parent_latent;
    res.metrics["child_latent"] = child_latent;

    res.assertions.push_back(check("child_decoder_cos_parent", run.decoder_cos(child_latent, p), ">=", 0.5));
    res.assertions.push_back(check("parent_encoder_cos_child", run.encoder_cos(parent_latent, c), "<=", -0.2));
    if (!full_signature) {
        return;
    }
    const auto both = rows_where(run.eval, {p, c, true, true, true});
    const auto alone = rows_where(run.eval, {p, c, true, false, true});
    const double alone_mean = mean_latent(run.acts.latents, alone, parent_latent);
    std::size_t silent = 0;
    for (std::size_t r : both) {
        silent += run.acts.latents(r, parent_latent) <= 1e-3 * alone_mean;
    }
    const double frac = both.empty() ? 0.0 : static_cast<double>(silent) / static_cast<double>(both.size());
    res.metrics["both_firing_test_rows"] = both.size();
    res.metrics["parent_only_mean"] = alone_mean;
    res.assertions.push_back(check("parent_silent_on_both_fraction", frac, ">=", 0.95));
    for (std::size_t f = 0; f < cfg.spec.size(); ++f) {
        if (f == p || f == c) {
            continue;
        }
        const std::size_t used[] = {parent_latent, child_latent};
        const std::size_t l = best_latent(run.decoder_cos, f, used);
        res.assertions.push_back(check("feature_" + std::to_string(f) + "_decoder_cos", run.decoder_cos(l, f), ">=", 0.99));
    }
}

void scenario_assertions(const ExperimentConfig & cfg, const PipelineRun & run, ScenarioResult & res) {
    const std::string & name = cfg.scenario;
    if (name == "toy-independent") {
        const auto perm = best_permutation(run.decoder_cos);
        std::size_t matched = 0;
        for (std::size_t f = 0; f < perm.size(); ++f) {
            res.assertions.push_back(
                check("feature_" + std::to_string(f) + "_decoder_cos", run.decoder_cos(perm[f], f), ">=", 0.99));
            matched += best_latent(run.encoder_cos, f) == perm[f];
        }
        res.metrics["permutation"] = perm;
        res.assertions.push_back(check("encoder_argmax_matches", static_cast<double>(matched), "==",
                                       static_cast<double>(perm.size())));
        res.assertions.push_back(check("parent_class_absorption_rate", run.absorption.classes.at(0).rate.value_or(0.0),
                                       "==", 0.0));
    } else if (name == "toy-hierarchical") {
        hierarchy_assertions(cfg, run, res, true);
    } else if (name == "toy-topk") {
        hierarchy_assertions(cfg, run, res, false);
    } else if (name == "toy-partial") {
        const std::size_t p = 0, c = 1;
        const std::size_t parent_latent = best_latent(run.decoder_cos, p);
        const auto both = rows_where(run.eval, {p, c, true, true, false});
        const auto alone = rows_where(run.eval, {p, c, true, false, false});
        const double alone_mean = mean_latent(run.acts.latents, alone, parent_latent);
        std::size_t weak = 0, zero = 0;
        double weak_mag = 0.0, zero_mag = 0.0;
        for (std::size_t r : both) {
            const double z = run.acts.latents(r, parent_latent);
            if (z == 0.0) {
                ++zero;
                zero_mag += run.eval.firings(r, p);
            } else if (z < 0.25 * alone_mean) {
                ++weak;
                weak_mag += run.eval.firings(r, p);
            }
        }
        weak_mag = weak ? weak_mag / static_cast<double>(weak) : 0.0;
        zero_mag = zero ? zero_mag / static_cast<double>(zero) : 0.0;
        res.metrics["parent_latent"] = parent_latent;
        res.metrics["both_firing_rows"] = both.size();
        res.metrics["parent_only_mean"] = alone_mean;
        res.metrics["weak_mean_parent_magnitude"] = weak_mag;
        res.metrics["zero_mean_parent_magnitude"] = zero_mag;
        res.assertions.push_back(check("weak_parent_firing_rows", static_cast<double>(weak), ">=", 1));
        res.assertions.push_back(check("zero_parent_firing_rows", static_cast<double>(zero), ">=", 1));
        // Zeros sit below the weak firings in parent magnitude.
        res.assertions.push_back(check("zero_rows_lower_magnitude", zero_mag - weak_mag, "<", 0.0));
    } else if (name == "toy-imperfect") {
        const std::size_t p = 0, c = 1;
        const std::size_t parent_latent = best_latent(run.decoder_cos, p);
        const std::size_t excl[] = {parent_latent};
        const std::size_t child_latent = best_latent(run.decoder_cos, c, excl);
        const auto both = rows_where(run.eval, {p, c, true, true, true});
        const auto alone = rows_where(run.eval, {p, c, true, false, true});
        const double ratio = mean_latent(run.acts.latents, both, parent_latent) /
                             std::max(mean_latent(run.acts.latents, alone, parent_latent), 1e-12);
        res.metrics["parent_latent"] = parent_latent;
        res.metrics["child_latent"] = child_latent;
        res.assertions.push_back(check("child_decoder_cos_parent", run.decoder_cos(child_latent, p), ">", 0.01));
        res.assertions.push_back(check("parent_encoder_cos_child", run.encoder_cos(parent_latent, c), "<", -0.01));
        res.assertions.push_back(check("parent_both_to_alone_ratio", ratio, "<", 0.99));
    } else if (name == "toy-splitting") {
        const auto & s0 = run.splits.at(0);
        res.assertions.push_back(check("class_0_split_k", static_cast<double>(s0.split_k), "==", 2));
        const double jump = s0.f1_by_k.size() >= 2 ? s0.f1_by_k[1] - s0.f1_by_k[0] : 0.0;
        res.assertions.push_back(check("class_0_f1_jump_k2", jump, ">=", 0.03));
        // Each selected latent should fire mostly with one sub-feature, and the
        // two should cover both.
        const std::size_t subs[] = {3, 4};
        std::vector<std::size_t> covered;
        double worst_purity = 1.0;
        for (std::size_t l : s0.latents) {
            std::size_t with[2] = {0, 0};
            for (std::size_t r = 0; r < run.eval.size(); ++r) {
                if (run.acts.latents(r, l) > 0.0) {
                    for (int k = 0; k < 2; ++k) {
                        with[k] += run.eval.firings(r, subs[k]) > 0.0;
                    }
                }
            }
            const int dom = with[1] > with[0] ? 1 : 0;
            const std::size_t total = with[0] + with[1];
            worst_purity = std::min(worst_purity, total ? static_cast<double>(with[dom]) / static_cast<double>(total) : 0.0);
            covered.push_back(subs[dom]);
        }
        std::sort(covered.begin(), covered.end());
        const bool both = covered == std::vector<std::size_t>{3, 4};
        res.assertions.push_back(check("class_0_split_latents_cover_sub_features", both ? 1.0 : 0.0, "==", 1));
        res.assertions.push_back(check("class_0_split_latent_purity", worst_purity, ">=", 0.9));
        for (std::size_t c = 1; c < run.splits.size(); ++c) {
            res.assertions.push_back(check("class_" + std::to_string(c) + "_split_k",
                                           static_cast<double>(run.splits[c].split_k), "==", 1));
        }
    } else if (name == "absorption-world") {
        const double expected = 0.05 / (0.05 + 0.20);
        const auto & main0 = run.absorption.classes.at(0);
        res.assertions.push_back(check("class_0_rate_error", std::abs(main0.rate.value_or(-1.0) - expected), "<=", 0.02));
        for (std::size_t c = 1; c < run.absorption.classes.size(); ++c) {
            res.assertions.push_back(check("class_" + std::to_string(c) + "_rate",
                                           run.absorption.classes[c].rate.value_or(0.0), "==", 0.0));
        }
        if (run.absorption_alt) {
            std::size_t disagree = 0;
            for (std::size_t c = 0; c < run.absorption.classes.size(); ++c) {
                const auto & alt = run.absorption_alt->classes.at(c).verdicts;
                for (const auto & v : run.absorption.classes[c].verdicts) {
                    const auto it = std::find_if(alt.begin(), alt.end(),
                                                 [&](const SampleVerdict & a) { return a.sample == v.sample; });
                    disagree += it == alt.end() || it->absorption != v.absorption;
                }
            }
            res.assertions.push_back(check("alt_main_verdict_disagreements", static_cast<double>(disagree), "==", 0));
            const auto & alt0 = run.absorption_alt->classes.at(0);
            res.assertions.push_back(
                check("class_0_alt_rate_error", std::abs(alt0.rate.value_or(-1.0) - expected), "<=", 0.02));
        }
    }
}

void ensure_writable(const fs::path & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) {
            throw UsageError("output directory not writable: " + dir.string());
        }
    }
    fs::remove(probe, ec);
}

void write_cosine(const fs::path & dir, const std::string & stem, const Matrix & cos, const std::string & title) {
    write_text_atomic(dir / (stem + ".csv"), matrix_csv(cos, labels("feature_", cos.cols())));
    write_text_atomic(dir / (stem + ".svg"),
                      heatmap_svg(cos, title, labels("latent ", cos.rows()), labels("f", cos.cols())));
}

json assertions_json(const std::vector<Assertion> & as) {
    json j = json::array();
    for (const auto & a : as) {
        j.push_back({{"name", a.name}, {"value", a.value}, {"op", a.op}, {"threshold", a.threshold}, {"pass", a.pass}});
    }
    return j;
}

}  // namespace

void ExperimentConfig::apply_seed(std::uint64_t s) {
    seed = s;
    dictionary_seed = s;
    eval_seed = s + 100;
    train.seed = s;
    absorption.seed = s;
    theory.seed = s;
}

void ExperimentConfig::validate() const {
    if (scenario == "theory-verify") {
        if (theory.samples == 0 || theory.grid_points < 2 || theory.probs.empty() || theory.deltas.empty()) {
            throw UsageError("theory check needs samples, a delta grid and probabilities");
        }
        for (const auto & p : theory.probs) p.validate();
        return;
    }
    spec.validate();
    if (spec.size() == 0) {
        throw UsageError("firing spec has no features");
    }
    if (spec.size() > dim) {
        throw UsageError("more features than dimensions");
    }
    if (task) {
        task->validate(spec);
    } else if (label_feature >= spec.size()) {
        throw UsageError("label_feature out of range");
    }
    if (eval_samples < 10) {
        throw UsageError("eval_samples must be at least 10");
    }
    if (sae_source == SaeSource::trained) {
        train.validate();
        if (shape.width == 0) {
            throw UsageError("SAE width must be positive");
        }
        if (shape.nonlinearity.kind == Nonlinearity::Kind::batch_topk &&
            (shape.nonlinearity.k == 0 || shape.nonlinearity.k > shape.width)) {
            throw UsageError("BatchTopK k must lie in [1, width]");
        }
    } else {
        if (!(delta >= 0.0 && delta <= 1.0)) {
            throw UsageError("delta must lie in [0, 1]");
        }
        if (parent >= spec.size() || children.empty()) {
            throw UsageError("delta construction needs a parent and at least one child");
        }
        for (std::size_t ch : children) {
            if (ch >= spec.size() || ch == parent) {
                throw UsageError("bad delta-construction child");
            }
        }
    }
    absorption.validate();
}

void to_json(json & j, const ExperimentConfig & c) {
    j = {{"scenario", c.scenario},
         {"seed", c.seed},
         {"dim", c.dim},
         {"dictionary", dictionary_tag(c.dictionary)},
         {"dictionary_seed", c.dictionary_seed},
         {"spec", c.spec},
         {"label_feature", c.label_feature},
         {"eval_samples", c.eval_samples},
         {"eval_seed", c.eval_seed},
         {"sae_source", source_tag(c.sae_source)},
         {"shape", c.shape},
         {"train", c.train},
         {"delta", c.delta},
         {"parent", c.parent},
         {"children", c.children},
         {"probe", c.probe},
         {"readout", c.readout},
         {"absorption", c.absorption}};
    j["task"] = c.task ? json(*c.task) : json(nullptr);
    json probs = json::array();
    for (const auto & p : c.theory.probs) {
        probs.push_back({p.p11, p.p10});
    }
    j["theory"] = {{"probs", probs},
                   {"deltas", c.theory.deltas},
                   {"samples", c.theory.samples},
                   {"grid_points", c.theory.grid_points},
                   {"seed", c.theory.seed}};
}

void from_json(const json & j, ExperimentConfig & c) {
    auto get = [&](const char * key, auto & out) {
        if (auto it = j.find(key); it != j.end()) {
            it->get_to(out);
        }
    };
    get("scenario", c.scenario);
    get("seed", c.seed);
    get("dim", c.dim);
    if (auto it = j.find("dictionary"); it != j.end()) {
        const auto s = it->get<std::string>();
        if (s != "random" && s != "basis") {
            throw FormatError("unknown dictionary kind '" + s + "'");
        }
        c.dictionary = s == "basis" ? DictionaryKind::basis : DictionaryKind::random;
    }
    get("dictionary_seed", c.dictionary_seed);
    get("spec", c.spec);
    if (auto it = j.find("task"); it != j.end()) {
        if (it->is_null()) {
            c.task.reset();
        } else {
            c.task = it->get<ClassTask>();
        }
    }
    get("label_feature", c.label_feature);
    get("eval_samples", c.eval_samples);
    get("eval_seed", c.eval_seed);
    if (auto it = j.find("sae_source"); it != j.end()) {
        const auto s = it->get<std::string>();
        if (s != "trained" && s != "delta_construction") {
            throw FormatError("unknown sae_source '" + s + "'");
        }
        c.sae_source = s == "trained" ? SaeSource::trained : SaeSource::delta_construction;
    }
    get("shape", c.shape);
    get("train", c.train);
    get("delta", c.delta);
    get("parent", c.parent);
    get("children", c.children);
    get("probe", c.probe);
    get("readout", c.readout);
    get("absorption", c.absorption);
    if (auto it = j.find("theory"); it != j.end()) {
        if (auto p = it->find("probs"); p != it->end()) {
            c.theory.probs.clear();
            for (const auto & pair : *p) {
                c.theory.probs.push_back(HierarchyProbabilities::from(pair.at(0).get<double>(), pair.at(1).get<double>()));
            }
        }
        if (auto d = it->find("deltas"); d != it->end()) {
            d->get_to(c.theory.deltas);
        }
        if (auto s = it->find("samples"); s != it->end()) {
            s->get_to(c.theory.samples);
        }
        if (auto g = it->find("grid_points"); g != it->end()) {
            g->get_to(c.theory.grid_points);
        }
        if (auto s = it->find("seed"); s != it->end()) {
            s->get_to(c.theory.seed);
        }
    }
}

const std::vector<std::string> & scenario_names() {
    static const std::vector<std::string> names = {"toy-independent", "toy-hierarchical", "toy-partial",
                                                   "toy-imperfect",   "toy-topk",         "toy-splitting",
                                                   "absorption-world", "theory-verify"};
    return names;
}

ExperimentConfig make_scenario(const std::string & name, std::uint64_t seed) {
    ExperimentConfig c = scenario_defaults(name);
    c.apply_seed(seed);
    return c;
}

ExperimentConfig load_experiment(const fs::path & path) {
    const json body = unwrap(read_json(path), "experiment_config");
    ExperimentConfig c;
    if (auto it = body.find("scenario"); it != body.end() && it->is_string()) {
        const auto & names = scenario_names();
        const auto name = it->get<std::string>();
        if (std::find(names.begin(), names.end(), name) != names.end()) {
            c = make_scenario(name, body.value("seed", std::uint64_t{0}));
        }
    }
    try {
        from_json(body, c);
    } catch (const json::exception & e) {
        throw FormatError(std::string("experiment_config: ") + e.what());
    }
    if (c.scenario.empty()) {
        c.scenario = "custom";
    }
    return c;
}

bool ScenarioResult::pass() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion & a) { return a.pass; });
}

FeatureDictionary build_dictionary(const ExperimentConfig & config) {
    return config.dictionary == DictionaryKind::basis ? basis_dictionary(config.dim, config.spec.size())
                                                      : make_dictionary(config.dim, config.spec.size(),
                                                                        config.dictionary_seed);
}

PipelineRun run_pipeline(const ExperimentConfig & cfg) {
    cfg.validate();
    PipelineRun r;
    r.dict = build_dictionary(cfg);
    if (cfg.sae_source == SaeSource::trained) {
        r.trace = cfg.task ? train_on_task(r.dict, cfg.spec, *cfg.task, cfg.shape, cfg.train)
                           : train(r.dict, cfg.spec, cfg.shape, cfg.train);
        r.sae = r.trace->model;
    } else {
        r.sae = delta_absorption_model(r.dict, cfg.parent, cfg.children, cfg.delta);
    }
    std::size_t classes = 2;
    if (cfg.task) {
        r.eval = make_labeled_task(r.dict, cfg.spec, *cfg.task, cfg.eval_samples, cfg.eval_seed);
        r.labels = *r.eval.labels;
        classes = cfg.task->classes;
    } else {
        r.eval = sample_batch(r.dict, cfg.spec, cfg.eval_samples, cfg.eval_seed);
        r.labels = labels_from_feature(r.eval, cfg.label_feature);
        r.eval.labels = r.labels;
    }
    r.acts = run_sae(r.sae, r.eval.activations);
    r.loss = compute_loss(r.sae, r.eval.activations, r.acts, cfg.train.l1_coeff);

    ProbeConfig probe_cfg = cfg.probe;
    probe_cfg.kind = ProbeKind::one_vs_rest;
    ProbeConfig readout_cfg = cfg.readout;
    readout_cfg.kind = ProbeKind::multinomial;
    r.probe = train_probe(r.eval.activations, r.labels, r.eval.split, probe_cfg, classes);
    r.readout = train_probe(r.eval.activations, r.labels, r.eval.split, readout_cfg, classes);
    r.probe_eval = evaluate(r.probe, r.eval.activations, r.labels, r.eval.split);

    AbsorptionConfig acfg = cfg.absorption;
    acfg.probing.k_max = std::min(acfg.probing.k_max, r.sae.width());
    r.splits = detect_splitting(r.acts.latents, r.labels, r.eval.split, {acfg.tau_split, acfg.probing});
    r.absorption = absorption_rate_main(r.sae, r.readout, r.probe, r.eval, acfg, r.splits);
    if (acfg.alt) {
        r.absorption_alt = absorption_rate_alt(r.sae, r.probe, r.eval, acfg, r.splits);
    }
    r.decoder_cos = cosine_map(r.sae.w_dec, r.dict.directions);
    r.encoder_cos = cosine_map(r.sae.w_enc, r.dict.directions);
    return r;
}

ScenarioResult run_scenario(const ExperimentConfig & cfg, const fs::path & out) {
    ensure_writable(out);
    ScenarioResult res;
    res.scenario = cfg.scenario;
    res.metrics = json::object();
    write_json(out / "config.json", document("experiment_config", cfg));

    if (cfg.scenario == "theory-verify") {
        const TheoryReport rep = verify_theory(cfg.theory);
        write_json(out / "theory.json", document("theory_report", rep));
        res.assertions.push_back(check("reconstruction_exact", rep.reconstruction.pass, "==", 1));
        for (std::size_t i = 0; i < rep.sparsity.size(); ++i) {
            const auto & row = rep.sparsity[i];
            res.assertions.push_back(check("sparsity_loss_" + std::to_string(i) + "_z",
                                           std::abs(row.empirical - row.closed_form) / std::max(row.std_error, 1e-300),
                                           "<=", 3.0));
        }
        for (std::size_t i = 0; i < rep.monotonicity.size(); ++i) {
            res.assertions.push_back(check("monotone_" + std::to_string(i), rep.monotonicity[i].pass, "==", 1));
        }
    } else {
        const PipelineRun run = run_pipeline(cfg);
        write_json(out / "dictionary.json", document("feature_dictionary", run.dict));
        write_json(out / "model.json", document("sae_model", run.sae));
        if (run.trace) {
            write_text_atomic(out / "trace.csv", trace_csv(*run.trace));
        }
        write_json(out / "probe.json", document("probe_model", run.probe));
        write_json(out / "readout.json", document("probe_model", run.readout));
        write_json(out / "splits.json", wrap("split_results", json(run.splits)));
        write_json(out / "absorption.json", document("absorption_report", run.absorption));
        write_text_atomic(out / "absorption.csv", absorption_csv(run.absorption));
        if (run.absorption_alt) {
            write_json(out / "absorption_alt.json", document("absorption_report", *run.absorption_alt));
            write_text_atomic(out / "absorption_alt.csv", absorption_csv(*run.absorption_alt));
        }
        write_cosine(out, "decoder_cosine", run.decoder_cos, cfg.scenario + ": decoder vs true features");
        write_cosine(out, "encoder_cosine", run.encoder_cos, cfg.scenario + ": encoder vs true features");

        const Matrix examples = firing_examples(run.dict, cfg.spec, run.sae);
        auto cols = labels("f", run.dict.count);
        for (const auto & z : labels("z", run.sae.width())) {
            cols.push_back(z);
        }
        write_text_atomic(out / "firing_examples.csv", matrix_csv(examples, cols));

        std::vector<LineSeries> curves;
        for (const auto & s : run.splits) {
            LineSeries line{"class " + std::to_string(s.cls), {}, s.f1_by_k};
            for (std::size_t k = 1; k <= s.f1_by_k.size(); ++k) {
                line.x.push_back(static_cast<double>(k));
            }
            curves.push_back(line);
        }
        write_text_atomic(out / "split_f1.svg", line_chart_svg(curves, "k-sparse F1 by class", "k", "F1"));

        res.metrics["loss"] = run.loss;
        res.metrics["probe_eval"] = run.probe_eval;
        json split_k = json::array();
        for (const auto & s : run.splits) {
            split_k.push_back(s.split_k);
        }
        res.metrics["split_k"] = split_k;
        res.metrics["absorption_rate"] = class_rates(run.absorption);
        if (run.absorption_alt) {
            res.metrics["absorption_rate_alt"] = class_rates(*run.absorption_alt);
        }
        scenario_assertions(cfg, run, res);
    }

    json report = {{"scenario", res.scenario}, {"seed", cfg.seed}, {"pass", res.pass()},
                   {"assertions", assertions_json(res.assertions)}, {"metrics", res.metrics}};
    write_json(out / "report.json", wrap("scenario_report", report));
    return res;
}

SweepAxis parse_axis(const std::string & name) {
    if (name == "l1_coeff" || name == "l1") {
        return SweepAxis::l1_coeff;
    }
    if (name == "width" || name == "H") {
        return SweepAxis::width;
    }
    if (name == "k") {
        return SweepAxis::k;
    }
    if (name == "delta") {
        return SweepAxis::delta;
    }
    throw UsageError("unknown sweep axis '" + name + "'");
}

std::string axis_name(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::l1_coeff: return "l1_coeff";
    case SweepAxis::width: return "width";
    case SweepAxis::k: return "k";
    case SweepAxis::delta: return "delta";
    }
    return "?";
}

void SweepSpec::validate() const {
    if (values.empty()) {
        throw UsageError("sweep grid is empty");
    }
    if (base.scenario == "theory-verify") {
        throw UsageError("theory-verify cannot be swept");
    }
    const bool trained = base.sae_source == SaeSource::trained;
    const bool topk = base.shape.nonlinearity.kind == Nonlinearity::Kind::batch_topk;
    for (double v : values) {
        const bool integral = v >= 1 && v == std::floor(v);
        switch (axis) {
        case SweepAxis::l1_coeff:
            if (!trained || topk) {
                throw UsageError("l1_coeff sweeps need a trained ReLU SAE");
            }
            if (!(v >= 0.0)) {
                throw UsageError("l1_coeff values must be nonnegative");
            }
            break;
        case SweepAxis::width:
            if (!trained || !integral) {
                throw UsageError("width sweeps need a trained SAE and positive integer widths");
            }
            break;
        case SweepAxis::k:
            if (!trained || !topk || !integral || v > static_cast<double>(base.shape.width)) {
                throw UsageError("k sweeps need a trained BatchTopK SAE and k in [1, width]");
            }
            break;
        case SweepAxis::delta:
            if (trained || !(v >= 0.0 && v <= 1.0)) {
                throw UsageError("delta sweeps need the delta construction and values in [0, 1]");
            }
            break;
        }
    }
}

std::string sweep_csv(SweepAxis axis, const std::vector<SweepPoint> & points) {
    std::string out = axis_name(axis) +
                      ",seed,l0,explained_variance,mean_f1,mean_precision,mean_recall,absorption_rate,"
                      "absorption_count,false_negatives,split_total,error\n";
    for (const auto & p : points) {
        out += csv_number(p.value) + "," + std::to_string(p.seed) + ",";
        if (p.error) {
            std::string msg = *p.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            out += ",,,,,,,,," + msg + "\n";
            continue;
        }
        out += csv_number(p.l0) + "," + csv_number(p.explained_variance) + "," + csv_number(p.mean_f1) + "," +
               csv_number(p.mean_precision) + "," + csv_number(p.mean_recall) + "," +
               (p.absorption_rate ? csv_number(*p.absorption_rate) : "") + "," + std::to_string(p.absorption_count) +
               "," + std::to_string(p.false_negatives) + "," + std::to_string(p.split_total) + ",\n";
    }
    return out;
}

std::vector<SweepPoint> run_sweep(const SweepSpec & spec, const fs::path & out) {
    spec.validate();
    ensure_writable(out);
    std::vector<SweepPoint> points(spec.values.size());
    std::vector<bool> done(points.size(), false);
    std::mutex mu;

    parallel_for(points.size(), [&](std::size_t i) {
        SweepPoint & pt = points[i];
        pt.value = spec.values[i];
        pt.seed = derive_seed(spec.base.seed, i);
        ExperimentConfig cfg = spec.base;
        cfg.train.seed = pt.seed;
        cfg.absorption.seed = pt.seed;
        switch (spec.axis) {
        case SweepAxis::l1_coeff: cfg.train.l1_coeff = pt.value; break;
        case SweepAxis::width: cfg.shape.width = static_cast<std::size_t>(pt.value); break;
        case SweepAxis::k: cfg.shape.nonlinearity.k = static_cast<std::size_t>(pt.value); break;
        case SweepAxis::delta: cfg.delta = pt.value; break;
        }
        try {
            const PipelineRun run = run_pipeline(cfg);
            pt.l0 = run.loss.l0_mean;
            pt.explained_variance = run.loss.explained_variance;
            const double n = static_cast<double>(run.splits.size());
            for (const auto & s : run.splits) {
                pt.mean_f1 += s.f1_by_k.at(0) / n;
                const ClassEval e = evaluate_latent(run.acts.latents, s.latents.at(0), run.labels, run.eval.split,
                                                    static_cast<int>(s.cls));
                pt.mean_precision += e.precision / n;
                pt.mean_recall += e.recall / n;
                pt.split_total += s.split_k;
            }
            pt.absorption_rate = run.absorption.mean_rate();
            for (const auto & c : run.absorption.classes) {
                pt.absorption_count += c.absorption_count;
                pt.false_negatives += c.audited_pool;
            }
        } catch (const std::exception & e) {
            pt.error = e.what();
        }

        std::lock_guard lock(mu);
        done[i] = true;
        json pj = {{"axis", axis_name(spec.axis)}, {"value", pt.value}, {"seed", pt.seed}};
        pj["error"] = pt.error ? json(*pt.error) : json(nullptr);
        if (!pt.error) {
            pj["l0"] = pt.l0;
            pj["explained_variance"] = pt.explained_variance;
            pj["mean_f1"] = pt.mean_f1;
            pj["mean_precision"] = pt.mean_precision;
            pj["mean_recall"] = pt.mean_recall;
            pj["absorption_rate"] = pt.absorption_rate ? json(*pt.absorption_rate) : json(nullptr);
            pj["absorption_count"] = pt.absorption_count;
            pj["false_negatives"] = pt.false_negatives;
            pj["split_total"] = pt.split_total;
        }
        write_json(out / ("point_" + std::to_string(i) + ".json"), wrap("sweep_point", pj));
        std::vector<SweepPoint> finished;
        for (std::size_t k = 0; k < points.size(); ++k) {
            if (done[k]) {
                finished.push_back(points[k]);
            }
        }
        write_text_atomic(out / "sweep.csv", sweep_csv(spec.axis, finished));
    });
    return points;
}

}  // namespace absorb
