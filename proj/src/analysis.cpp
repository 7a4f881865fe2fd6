#include "absorb/analysis.hpp"

#include "absorb/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace absorb {

Matrix cosine_map(const Matrix & a, const Matrix & b) {
    require_shape(a.cols() == b.cols(), "cosine_map: column dimensions differ");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) = cosine(a.row(i), b.row(j));
        }
    }
    return out;
}

double metric_m(std::span<const double> logits, std::size_t y, MetricVariant variant) {
    if (logits.size() < 2) {
        throw std::invalid_argument("metric m needs at least two classes");
    }
    if (y >= logits.size()) {
        throw std::out_of_range("correct class not among the logits");
    }
    double rest = variant == MetricVariant::mean ? 0.0 : -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < logits.size(); ++l) {
        if (l == y) {
            continue;
        }
        if (variant == MetricVariant::mean) {
            rest += logits[l];
        } else {
            rest = std::max(rest, logits[l]);
        }
    }
    if (variant == MetricVariant::mean) {
        rest /= static_cast<double>(logits.size() - 1);
    }
    return logits[y] - rest;
}

namespace {

struct RowState {
    std::vector<double> z;
    std::vector<double> error;
};

RowState row_state(const SaeModel & sae, std::span<const double> activation, std::span<const double> z) {
    RowState s{std::vector<double>(z.begin(), z.end()), std::vector<double>(activation.begin(), activation.end())};
    const auto rec = decode_row(sae, s.z);
    for (std::size_t j = 0; j < rec.size(); ++j) {
        s.error[j] -= rec[j];
    }
    return s;
}

RowState row_state(const SaeModel & sae, std::span<const double> activation) {
    require_shape(activation.size() == sae.input_dim(), "activation width does not match SAE d");
    Matrix one(1, activation.size());
    std::copy(activation.begin(), activation.end(), one.row(0).begin());
    const Matrix z = encode(sae, one);
    return row_state(sae, activation, z.row(0));
}

// m of readout(decode(z) + error).
double metric_with(const SaeModel & sae, const ProbeModel & readout, std::span<const double> z,
                   std::span<const double> error, std::size_t y, MetricVariant variant) {
    auto x = decode_row(sae, z);
    axpy(1.0, error, x);
    return metric_m(readout.logits(x), y, variant);
}

AblationSweep sweep_from(const SaeModel & sae, const ProbeModel & readout, RowState s, std::size_t y,
                         MetricVariant variant) {
    AblationSweep out;
    out.baseline = metric_with(sae, readout, s.z, s.error, y, variant);
    out.effects.assign(s.z.size(), 0.0);
    for (std::size_t l = 0; l < s.z.size(); ++l) {
        if (s.z[l] == 0.0) {
            continue;
        }
        const double keep = s.z[l];
        s.z[l] = 0.0;
        out.effects[l] = out.baseline - metric_with(sae, readout, s.z, s.error, y, variant);
        s.z[l] = keep;
    }
    out.latents = std::move(s.z);
    return out;
}

}  // namespace

double ablate_latent(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                     std::size_t latent, std::size_t y, MetricVariant variant) {
    if (latent >= sae.width()) {
        throw std::out_of_range("latent index out of range");
    }
    RowState s = row_state(sae, activation);
    const double base = metric_with(sae, readout, s.z, s.error, y, variant);
    if (s.z[latent] == 0.0) {
        return 0.0;
    }
    s.z[latent] = 0.0;
    return base - metric_with(sae, readout, s.z, s.error, y, variant);
}

AblationSweep ablation_sweep(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                             std::size_t y, MetricVariant variant) {
    return sweep_from(sae, readout, row_state(sae, activation), y, variant);
}

double ablate_all(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                  std::size_t y, MetricVariant variant) {
    RowState s = row_state(sae, activation);
    const double base = metric_with(sae, readout, s.z, s.error, y, variant);
    std::fill(s.z.begin(), s.z.end(), 0.0);
    return base - metric_with(sae, readout, s.z, s.error, y, variant);
}

std::vector<SplitResult> detect_splitting(const Matrix & latents, std::span<const int> labels,
                                          std::span<const Split> split, const SplitSettings & settings) {
    const std::size_t k_max = std::min(settings.probing.k_max, latents.cols());
    if (k_max == 0) {
        throw std::out_of_range("k_max must be >= 1");
    }
    ProbeConfig l1cfg = settings.probing.fit;
    l1cfg.kind = ProbeKind::one_vs_rest;
    l1cfg.l1_coeff = settings.probing.l1_coeff;
    const ProbeModel full = train_probe(latents, labels, split, l1cfg);

    std::vector<SplitResult> out(full.classes());
    parallel_for(full.classes(), [&](std::size_t c) {
        SplitResult & r = out[c];
        r.cls = c;
        r.f1_by_k.push_back(masked_class_f1(latents, labels, split, c, select_k_sparse(full, c, 1, settings.probing.selection), l1cfg));
        r.split_k = 1;
        for (std::size_t k = 2; k <= k_max; ++k) {
            r.f1_by_k.push_back(masked_class_f1(latents, labels, split, c, select_k_sparse(full, c, k, settings.probing.selection), l1cfg));
            if (r.f1_by_k[k - 1] - r.f1_by_k[k - 2] <= settings.tau_split) {
                break;
            }
            r.split_k = k;
        }
        r.latents = select_k_sparse(full, c, r.split_k, settings.probing.selection);
    });
    return out;
}

void AbsorptionConfig::validate() const {
    for (double v : {tau_split, tau_cos, ablation_lead}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("absorption thresholds must be finite and nonnegative");
        }
    }
    if (fn_sample_cap == 0) {
        throw std::invalid_argument("fn_sample_cap must be positive");
    }
    if (alt) {
        if (!(alt->tau_c > 0.0 && alt->tau_c <= 1.0)) {
            throw std::invalid_argument("tau_c must lie in (0, 1]");
        }
        if (!(alt->tau_m >= 0.0) || alt->n_absorbers == 0) {
            throw std::invalid_argument("tau_m must be >= 0 and N >= 1");
        }
    }
}

std::optional<double> AbsorptionReport::mean_rate() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto & c : classes) {
        if (c.rate) {
            sum += *c.rate;
            ++n;
        }
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(n);
}

namespace {

SplitSettings split_settings(const AbsorptionConfig & config) { return {config.tau_split, config.probing}; }

void check_batch(const SaeModel & sae, const ProbeModel & probe, const ActivationBatch & batch) {
    if (!batch.labels) {
        throw std::invalid_argument("absorption metrics need a labeled batch");
    }
    require_shape(batch.activations.cols() == sae.input_dim(), "batch width does not match SAE d");
    require_shape(probe.inputs() == sae.input_dim(), "probe must be trained on raw activations");
    require_shape(batch.split.size() == batch.size() && batch.labels->size() == batch.size(),
                  "labels and split tags must match the batch");
}

// Test rows of class c that the probe classifies as c.
std::vector<std::size_t> true_positives(const ProbeModel & probe, const ActivationBatch & batch, std::size_t c) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        if (batch.split[r] == Split::test && (*batch.labels)[r] == static_cast<int>(c) &&
            probe.fires(batch.activations.row(r), c)) {
            rows.push_back(r);
        }
    }
    return rows;
}

// Share of a . d_p carried by each latent's reconstruction contribution.
// Returns false when a . d_p <= 0.
bool projection_fractions(const SaeModel & sae, std::span<const double> a, std::span<const double> z,
                          std::span<const double> d_p, std::vector<double> & out) {
    const double denom = dot(a, d_p);
    if (!(denom > 0.0)) {
        return false;
    }
    out.assign(z.size(), 0.0);
    for (std::size_t l = 0; l < z.size(); ++l) {
        if (z[l] != 0.0) {
            out[l] = z[l] * dot(sae.w_dec.row(l), d_p) / denom;
        }
    }
    return true;
}

std::vector<std::size_t> main_latents(const SplitResult & s, const AbsorptionConfig & config) {
    std::size_t m = s.latents.size();
    if (config.alt && config.alt->n_main > 0) {
        m = std::min(m, config.alt->n_main);
    }
    return {s.latents.begin(), s.latents.begin() + static_cast<std::ptrdiff_t>(m)};
}

// Sum of the n largest fractions among latents outside `main`.
double absorber_share(const std::vector<double> & frac, const std::vector<std::size_t> & main, std::size_t n) {
    std::vector<double> rest;
    for (std::size_t l = 0; l < frac.size(); ++l) {
        if (std::find(main.begin(), main.end(), l) == main.end()) {
            rest.push_back(frac[l]);
        }
    }
    std::sort(rest.begin(), rest.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(n, rest.size()); ++i) {
        s += rest[i];
    }
    return s;
}

double main_share(const std::vector<double> & frac, const std::vector<std::size_t> & main) {
    double s = 0.0;
    for (std::size_t l : main) {
        s += frac[l];
    }
    return s;
}

void finish_rate(ClassAbsorption & ca) {
    ca.absorption_estimate = ca.sampled > 0 ? static_cast<double>(ca.absorption_count) *
                                                  static_cast<double>(ca.audited_pool) /
                                                  static_cast<double>(ca.sampled)
                                            : 0.0;
    if (ca.true_positives > 0) {
        ca.rate = std::min(1.0, ca.absorption_estimate / static_cast<double>(ca.true_positives));
    }
}

}  // namespace

AbsorptionReport absorption_rate_main(const SaeModel & sae, const ProbeModel & readout, const ProbeModel & probe,
                                      const ActivationBatch & batch, const AbsorptionConfig & config) {
    config.validate();
    check_batch(sae, probe, batch);
    const Matrix latents = encode(sae, batch.activations);
    return absorption_rate_main(sae, readout, probe, batch, config,
                                detect_splitting(latents, *batch.labels, batch.split, split_settings(config)));
}

AbsorptionReport absorption_rate_main(const SaeModel & sae, const ProbeModel & readout, const ProbeModel & probe,
                                      const ActivationBatch & batch, const AbsorptionConfig & config,
                                      const std::vector<SplitResult> & splits) {
    config.validate();
    check_batch(sae, probe, batch);
    require_shape(readout.inputs() == sae.input_dim(), "readout must be trained on raw activations");
    const Matrix latents = encode(sae, batch.activations);

    AbsorptionReport rep;
    rep.metric = "main";
    rep.config = config;
    for (const SplitResult & s : splits) {
        ClassAbsorption ca;
        ca.cls = s.cls;
        ca.split_k = s.split_k;
        ca.split_latents = s.latents;
        const auto tps = true_positives(probe, batch, s.cls);
        ca.true_positives = tps.size();

        std::vector<std::size_t> pool;
        for (std::size_t r : tps) {
            bool silent = true;
            for (std::size_t l : s.latents) {
                silent = silent && latents(r, l) <= 0.0;
            }
            if (silent) {
                pool.push_back(r);
            }
        }
        ca.audited_pool = pool.size();
        if (pool.size() > config.fn_sample_cap) {
            std::mt19937_64 rng(derive_seed(config.seed, 0xab50 + s.cls));
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(config.fn_sample_cap);
            std::sort(pool.begin(), pool.end());
        }
        ca.sampled = pool.size();

        auto d_p = probe.weights.row(s.cls);
        ca.verdicts.resize(pool.size());
        parallel_for(pool.size(), [&](std::size_t i) {
            const std::size_t r = pool[i];
            auto a = batch.activations.row(r);
            const AblationSweep sw = sweep_from(sae, readout, row_state(sae, a, latents.row(r)),
                                                static_cast<std::size_t>((*batch.labels)[r]), config.variant);
            SampleVerdict v;
            v.sample = r;
            std::vector<std::size_t> order(sw.effects.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t x, std::size_t y) { return sw.effects[x] > sw.effects[y]; });
            v.top_latent = order[0];
            v.top_effect = sw.effects[order[0]];
            v.runner_up_effect = order.size() > 1 ? sw.effects[order[1]] : 0.0;
            v.cosine = cosine(d_p, sae.w_dec.row(v.top_latent));
            std::vector<double> frac;
            if (projection_fractions(sae, a, sw.latents, d_p, frac)) {
                v.projection_fraction = frac[v.top_latent];
                v.main_fraction = main_share(frac, s.latents);
            }
            v.absorption = v.cosine > config.tau_cos && v.top_effect - v.runner_up_effect >= config.ablation_lead;
            ca.verdicts[i] = v;
        });
        for (const auto & v : ca.verdicts) {
            ca.absorption_count += v.absorption ? 1 : 0;
        }
        finish_rate(ca);
        rep.classes.push_back(std::move(ca));
    }
    return rep;
}

AbsorptionReport absorption_rate_alt(const SaeModel & sae, const ProbeModel & probe, const ActivationBatch & batch,
                                     const AbsorptionConfig & config) {
    config.validate();
    check_batch(sae, probe, batch);
    const Matrix latents = encode(sae, batch.activations);
    return absorption_rate_alt(sae, probe, batch, config,
                               detect_splitting(latents, *batch.labels, batch.split, split_settings(config)));
}

AbsorptionReport absorption_rate_alt(const SaeModel & sae, const ProbeModel & probe, const ActivationBatch & batch,
                                     const AbsorptionConfig & config, const std::vector<SplitResult> & splits) {
    if (!config.alt) {
        throw std::invalid_argument("alternate metric is not configured");
    }
    config.validate();
    check_batch(sae, probe, batch);
    const AltMetricConfig & alt = *config.alt;
    const Matrix latents = encode(sae, batch.activations);

    AbsorptionReport rep;
    rep.metric = "alt";
    rep.config = config;
    for (const SplitResult & s : splits) {
        ClassAbsorption ca;
        ca.cls = s.cls;
        ca.split_k = s.split_k;
        ca.split_latents = s.latents;
        const auto tps = true_positives(probe, batch, s.cls);
        ca.true_positives = tps.size();
        ca.audited_pool = tps.size();
        const auto main = main_latents(s, config);
        auto d_p = probe.weights.row(s.cls);

        std::vector<double> frac;
        for (std::size_t r : tps) {
            auto a = batch.activations.row(r);
            if (!projection_fractions(sae, a, latents.row(r), d_p, frac)) {
                ++ca.skipped_nonpositive;
                continue;
            }
            SampleVerdict v;
            v.sample = r;
            v.projection_fraction = absorber_share(frac, main, alt.n_absorbers);
            v.main_fraction = main_share(frac, main);
            // top_latent: the largest single absorber, for reporting
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < frac.size(); ++l) {
                if (std::find(main.begin(), main.end(), l) == main.end() && frac[l] > best) {
                    best = frac[l];
                    v.top_latent = l;
                }
            }
            v.cosine = cosine(d_p, sae.w_dec.row(v.top_latent));
            v.absorption = v.projection_fraction > alt.tau_c && v.main_fraction <= alt.tau_m;
            ca.verdicts.push_back(v);
        }
        ca.sampled = ca.verdicts.size();
        ca.audited_pool = ca.sampled;
        for (const auto & v : ca.verdicts) {
            ca.absorption_count += v.absorption ? 1 : 0;
        }
        finish_rate(ca);
        rep.classes.push_back(std::move(ca));
    }
    return rep;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double & v : p) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double & v : p) {
        v /= z;
    }
    return p;
}

EditResult edit_class(const SaeModel & sae, const ProbeModel & readout, std::span<const double> activation,
                      std::size_t from_class, std::size_t to_class, std::span<const std::size_t> class_latent,
                      std::span<const double> mean_acts) {
    if (from_class >= class_latent.size() || to_class >= class_latent.size() || to_class >= mean_acts.size()) {
        throw std::out_of_range("class has no latent mapping");
    }
    if (from_class == to_class) {
        return {};
    }
    RowState s = row_state(sae, activation);
    auto x = decode_row(sae, s.z);
    axpy(1.0, s.error, x);
    const auto before = softmax(readout.logits(x));

    s.z[class_latent[from_class]] = 0.0;
    s.z[class_latent[to_class]] = mean_acts[to_class];
    x = decode_row(sae, s.z);
    axpy(1.0, s.error, x);
    const auto after = softmax(readout.logits(x));
    return {before[from_class] - after[from_class], after[to_class] - before[to_class]};
}

std::vector<double> class_mean_activations(const Matrix & latents, std::span<const int> labels,
                                           std::span<const Split> split, std::span<const std::size_t> class_latent) {
    std::vector<double> mean(class_latent.size(), 0.0);
    for (std::size_t c = 0; c < class_latent.size(); ++c) {
        require_shape(class_latent[c] < latents.cols(), "class latent out of range");
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < latents.rows(); ++r) {
            const double v = latents(r, class_latent[c]);
            if (split[r] == Split::train && labels[r] == static_cast<int>(c) && v > 0.0) {
                sum += v;
                ++n;
            }
        }
        mean[c] = n > 0 ? sum / static_cast<double>(n) : 0.0;
    }
    return mean;
}

}  // namespace absorb
