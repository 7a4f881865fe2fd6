#include "absorb/probes.hpp"

#include "absorb/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace absorb {

std::vector<double> ProbeModel::logits(std::span<const double> x) const {
    require_shape(x.size() == inputs(), "probe: input width mismatch");
    std::vector<double> out(bias);
    for (std::size_t c = 0; c < classes(); ++c) {
        out[c] += dot(weights.row(c), x);
    }
    return out;
}

Matrix ProbeModel::logits(const Matrix & x) const {
    require_shape(x.cols() == inputs(), "probe: input width mismatch");
    Matrix out = matmul_bt(x, weights);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        axpy(1.0, bias, out.row(r));
    }
    return out;
}

int ProbeModel::predict(std::span<const double> x) const {
    const auto g = logits(x);
    return static_cast<int>(std::max_element(g.begin(), g.end()) - g.begin());
}

bool ProbeModel::fires(std::span<const double> x, std::size_t c) const {
    if (kind == ProbeKind::multinomial) {
        return predict(x) == static_cast<int>(c);
    }
    return bias[c] + dot(weights.row(c), x) > 0.0;
}

void ProbeModel::validate() const {
    require_shape(bias.size() == classes(), "probe bias length must equal class count");
    if (!all_finite(weights.data()) || !all_finite(bias)) {
        throw ProbeError("probe parameters must be finite");
    }
    if (feature_mask) {
        require_shape(feature_mask->size() == classes(), "feature mask needs one entry per class");
        for (std::size_t c = 0; c < classes(); ++c) {
            std::vector<char> allowed(inputs(), 0);
            for (std::size_t j : (*feature_mask)[c]) {
                require_shape(j < inputs(), "feature mask index out of range");
                allowed[j] = 1;
            }
            for (std::size_t j = 0; j < inputs(); ++j) {
                if (!allowed[j] && weights(c, j) != 0.0) {
                    throw ProbeError("probe weight outside its feature mask");
                }
            }
        }
    }
}

namespace {

struct Fit {
    std::vector<double> w;  // classes x cols, row-major
    std::vector<double> b;
    std::size_t iterations = 0;
};

double soft_threshold(double v, double t) {
    if (v > t) {
        return v - t;
    }
    if (v < -t) {
        return v + t;
    }
    return 0.0;
}

double sigmoid(double t) {
    if (t >= 0.0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    const double e = std::exp(t);
    return e / (1.0 + e);
}

struct Compressed {
    Matrix x;
    std::vector<int> y;
    std::vector<double> count;
};

// Merges identical (row, target) pairs into one weighted row. Synthetic
// activations repeat a lot, and the loss is a plain sum over rows.
Compressed compress(const Matrix & x, const std::vector<int> & y) {
    const std::size_t n = x.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto less = [&](std::size_t a, std::size_t b) {
        if (y[a] != y[b]) {
            return y[a] < y[b];
        }
        auto ra = x.row(a);
        auto rb = x.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(order.begin(), order.end(), less);
    std::vector<std::size_t> keep;
    std::vector<double> count;
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep.empty() && !less(keep.back(), order[i]) && !less(order[i], keep.back())) {
            count.back() += 1.0;
        } else {
            keep.push_back(order[i]);
            count.push_back(1.0);
        }
    }
    Compressed out{Matrix(keep.size(), x.cols()), std::vector<int>(keep.size()), std::move(count)};
    for (std::size_t i = 0; i < keep.size(); ++i) {
        auto src = x.row(keep[i]);
        std::copy(src.begin(), src.end(), out.x.row(i).begin());
        out.y[i] = y[keep[i]];
    }
    return out;
}

// Accelerated proximal gradient on mean logistic loss + l1 * |w|_1. The bias
// is not penalized. `x` holds the training rows only.
// classes == 1: binary with targets y in {0, 1}; otherwise softmax over
// `classes` with targets the class ids.
Fit fit_logistic(const Matrix & x_all, const std::vector<int> & y_all, std::size_t classes, double l1,
                 const ProbeConfig & config) {
    const auto nn = static_cast<double>(x_all.rows());
    const Compressed data = compress(x_all, y_all);
    const Matrix & x = data.x;
    const std::vector<int> & y = data.y;
    const std::size_t n = x.rows();
    const std::size_t m = x.cols();
    const bool binary = classes == 1;

    double mean_sq = 1.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double s = norm(x.row(r));
        mean_sq += data.count[r] * s * s / nn;
    }
    const double lipschitz = (binary ? 0.25 : 0.5) * mean_sq;
    const double step = 1.0 / lipschitz;

    const std::size_t np = classes * m;
    std::vector<double> w(np, 0.0), b(classes, 0.0);
    std::vector<double> yw = w, yb = b;
    std::vector<double> gw(np), gb(classes), logit(classes);
    double t = 1.0;
    std::size_t it = 0;
    for (; it < config.max_iter; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        const double * wp = yw.data();
        double * gp = gw.data();
        for (std::size_t r = 0; r < n; ++r) {
            const double * xr = x.row(r).data();
            for (std::size_t c = 0; c < classes; ++c) {
                const double * wc = wp + c * m;
                // four partial sums so the reduction vectorizes
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                std::size_t j = 0;
                for (; j + 4 <= m; j += 4) {
                    a0 += wc[j] * xr[j];
                    a1 += wc[j + 1] * xr[j + 1];
                    a2 += wc[j + 2] * xr[j + 2];
                    a3 += wc[j + 3] * xr[j + 3];
                }
                for (; j < m; ++j) {
                    a0 += wc[j] * xr[j];
                }
                logit[c] = yb[c] + ((a0 + a1) + (a2 + a3));
            }
            if (binary) {
                logit[0] = sigmoid(logit[0]) - static_cast<double>(y[r]);
            } else {
                const double mx = *std::max_element(logit.begin(), logit.end());
                double z = 0.0;
                for (double & v : logit) {
                    v = std::exp(v - mx);
                    z += v;
                }
                for (std::size_t c = 0; c < classes; ++c) {
                    logit[c] = logit[c] / z - (y[r] == static_cast<int>(c) ? 1.0 : 0.0);
                }
            }
            for (std::size_t c = 0; c < classes; ++c) {
                const double g = logit[c] * data.count[r];
                double * gc = gp + c * m;
                for (std::size_t j = 0; j < m; ++j) {
                    gc[j] += g * xr[j];
                }
                gb[c] += g;
            }
        }
        for (double & v : gw) {
            v /= nn;
        }
        for (double & v : gb) {
            v /= nn;
        }

        double moved = 0.0;
        std::vector<double> w_new(np), b_new(classes);
        for (std::size_t i = 0; i < np; ++i) {
            w_new[i] = soft_threshold(yw[i] - step * gw[i], step * l1);
            moved += (w_new[i] - w[i]) * (w_new[i] - w[i]);
        }
        for (std::size_t c = 0; c < classes; ++c) {
            b_new[c] = yb[c] - step * gb[c];
            moved += (b_new[c] - b[c]) * (b_new[c] - b[c]);
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double beta = (t - 1.0) / t_next;
        for (std::size_t i = 0; i < np; ++i) {
            yw[i] = w_new[i] + beta * (w_new[i] - w[i]);
        }
        for (std::size_t c = 0; c < classes; ++c) {
            yb[c] = b_new[c] + beta * (b_new[c] - b[c]);
        }
        w = std::move(w_new);
        b = std::move(b_new);
        t = t_next;
        if (std::sqrt(moved) / step < config.tolerance) {
            ++it;
            break;
        }
    }
    return {std::move(w), std::move(b), it};
}

void check_inputs(const Matrix & inputs, std::span<const int> labels, std::span<const Split> split) {
    require_shape(labels.size() == inputs.rows() && split.size() == inputs.rows(),
                  "probe: labels and split tags must match the row count");
    if (!all_finite(inputs.data())) {
        throw ProbeError("probe inputs must be finite");
    }
}

std::vector<std::size_t> train_rows(std::span<const Split> split) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == Split::train) {
            rows.push_back(i);
        }
    }
    return rows;
}

Matrix gather(const Matrix & inputs, const std::vector<std::size_t> & rows, std::span<const std::size_t> cols) {
    const bool all = cols.empty();
    Matrix out(rows.size(), all ? inputs.cols() : cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = inputs.row(rows[r]);
        auto dst = out.row(r);
        if (all) {
            std::copy(src.begin(), src.end(), dst.begin());
        } else {
            for (std::size_t j = 0; j < cols.size(); ++j) {
                dst[j] = src[cols[j]];
            }
        }
    }
    return out;
}

std::size_t infer_classes(std::span<const int> labels, std::size_t classes) {
    int mx = -1;
    for (int l : labels) {
        if (l < 0) {
            throw ProbeError("labels must be nonnegative");
        }
        mx = std::max(mx, l);
    }
    const auto needed = static_cast<std::size_t>(mx + 1);
    if (classes == 0) {
        return needed;
    }
    if (needed > classes) {
        throw ProbeError("label exceeds class count");
    }
    return classes;
}

void require_two_classes(std::span<const int> labels, const std::vector<std::size_t> & rows) {
    for (std::size_t r : rows) {
        if (labels[r] != labels[rows.front()]) {
            return;
        }
    }
    throw ProbeError("train split must contain at least two classes");
}

// Binary one-vs-rest fit for class c on the given columns (empty: all).
Fit fit_one_vs_rest(const Matrix & x, std::span<const int> labels, const std::vector<std::size_t> & rows,
                    std::size_t c, double l1, const ProbeConfig & config) {
    std::vector<int> y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        y[r] = labels[rows[r]] == static_cast<int>(c) ? 1 : 0;
    }
    return fit_logistic(x, y, 1, l1, config);
}

}  // namespace

ProbeModel train_probe(const Matrix & inputs, std::span<const int> labels, std::span<const Split> split,
                       const ProbeConfig & config, std::size_t classes) {
    check_inputs(inputs, labels, split);
    classes = infer_classes(labels, classes);
    const auto rows = train_rows(split);
    if (rows.empty()) {
        throw ProbeError("no training rows");
    }
    require_two_classes(labels, rows);
    const Matrix x = gather(inputs, rows, {});

    ProbeModel probe;
    probe.kind = config.kind;
    probe.l1_coeff = config.l1_coeff;
    probe.weights = Matrix(classes, inputs.cols());
    probe.bias.assign(classes, 0.0);
    if (config.kind == ProbeKind::multinomial) {
        std::vector<int> y(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            y[r] = labels[rows[r]];
        }
        const Fit fit = fit_logistic(x, y, classes, config.l1_coeff, config);
        std::copy(fit.w.begin(), fit.w.end(), probe.weights.data().begin());
        probe.bias = fit.b;
        probe.iterations = fit.iterations;
        return probe;
    }
    std::vector<Fit> fits(classes);
    parallel_for(classes, [&](std::size_t c) { fits[c] = fit_one_vs_rest(x, labels, rows, c, config.l1_coeff, config); });
    for (std::size_t c = 0; c < classes; ++c) {
        std::copy(fits[c].w.begin(), fits[c].w.end(), probe.weights.row(c).begin());
        probe.bias[c] = fits[c].b[0];
        probe.iterations = std::max(probe.iterations, fits[c].iterations);
    }
    return probe;
}

ProbeModel train_masked_probe(const Matrix & inputs, std::span<const int> labels, std::span<const Split> split,
                              const std::vector<std::vector<std::size_t>> & mask, const ProbeConfig & config) {
    if (config.kind != ProbeKind::one_vs_rest) {
        throw ProbeError("masked probes are one-vs-rest");
    }
    check_inputs(inputs, labels, split);
    const std::size_t classes = infer_classes(labels, mask.size());
    require_shape(mask.size() == classes, "mask needs one entry per class");
    const auto rows = train_rows(split);
    if (rows.empty()) {
        throw ProbeError("no training rows");
    }
    require_two_classes(labels, rows);

    ProbeModel probe;
    probe.kind = ProbeKind::one_vs_rest;
    probe.l1_coeff = config.l1_coeff;
    probe.weights = Matrix(classes, inputs.cols());
    probe.bias.assign(classes, 0.0);
    probe.feature_mask = mask;
    std::vector<Fit> fits(classes);
    parallel_for(classes, [&](std::size_t c) {
        for (std::size_t j : mask[c]) {
            require_shape(j < inputs.cols(), "mask index out of range");
        }
        const Matrix x = gather(inputs, rows, mask[c]);
        fits[c] = fit_one_vs_rest(x, labels, rows, c, config.l1_coeff, config);
    });
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t j = 0; j < mask[c].size(); ++j) {
            probe.weights(c, mask[c][j]) = fits[c].w[j];
        }
        probe.bias[c] = fits[c].b[0];
        probe.iterations = std::max(probe.iterations, fits[c].iterations);
    }
    return probe;
}

std::vector<std::size_t> select_k_sparse(const ProbeModel & probe, std::size_t cls, std::size_t k,
                                         KSelection mode) {
    if (k == 0 || k > probe.inputs()) {
        throw std::out_of_range("k must lie in [1, M]");
    }
    require_shape(cls < probe.classes(), "class out of range");
    std::vector<std::size_t> idx(probe.inputs());
    std::iota(idx.begin(), idx.end(), 0);
    auto row = probe.weights.row(cls);
    if (mode == KSelection::magnitude) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(row[a]) > std::abs(row[b]); });
    } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    }
    idx.resize(k);
    return idx;
}

std::vector<std::vector<std::size_t>> select_k_sparse(const ProbeModel & probe, std::size_t k, KSelection mode) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t c = 0; c < probe.classes(); ++c) {
        out.push_back(select_k_sparse(probe, c, k, mode));
    }
    return out;
}

ClassEval ClassEval::from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    ClassEval e{tp, fp, fn, tn, 0.0, 0.0, 0.0};
    e.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    e.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    e.f1 = e.precision + e.recall > 0.0 ? 2.0 * e.precision * e.recall / (e.precision + e.recall) : 0.0;
    return e;
}

EvalReport evaluate(const ProbeModel & probe, const Matrix & inputs, std::span<const int> labels,
                    std::span<const Split> split) {
    check_inputs(inputs, labels, split);
    EvalReport rep;
    std::vector<std::array<std::size_t, 4>> counts(probe.classes(), {0, 0, 0, 0});
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        if (split[r] != Split::test) {
            continue;
        }
        ++rep.test_rows;
        const auto g = probe.logits(inputs.row(r));
        const auto top = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
        for (std::size_t c = 0; c < probe.classes(); ++c) {
            const bool pred = probe.kind == ProbeKind::multinomial ? top == c : g[c] > 0.0;
            const bool actual = labels[r] == static_cast<int>(c);
            ++counts[c][pred ? (actual ? 0 : 1) : (actual ? 2 : 3)];
        }
    }
    if (rep.test_rows == 0) {
        throw ProbeError("empty test split");
    }
    for (const auto & k : counts) {
        rep.per_class.push_back(ClassEval::from_counts(k[0], k[1], k[2], k[3]));
        rep.mean_f1 += rep.per_class.back().f1;
        rep.mean_precision += rep.per_class.back().precision;
        rep.mean_recall += rep.per_class.back().recall;
    }
    const auto c = static_cast<double>(probe.classes());
    rep.mean_f1 /= c;
    rep.mean_precision /= c;
    rep.mean_recall /= c;
    return rep;
}

ClassEval evaluate_latent(const Matrix & latents, std::size_t latent, std::span<const int> labels,
                          std::span<const Split> split, int cls, double threshold) {
    require_shape(latent < latents.cols(), "latent index out of range");
    check_inputs(latents, labels, split);
    if (!std::isfinite(threshold)) {
        throw std::invalid_argument("threshold must be finite");
    }
    std::size_t k[4] = {0, 0, 0, 0};
    std::size_t seen = 0;
    for (std::size_t r = 0; r < latents.rows(); ++r) {
        if (split[r] != Split::test) {
            continue;
        }
        ++seen;
        const bool pred = latents(r, latent) > threshold;
        const bool actual = labels[r] == cls;
        ++k[pred ? (actual ? 0 : 1) : (actual ? 2 : 3)];
    }
    if (seen == 0) {
        throw ProbeError("empty test split");
    }
    return ClassEval::from_counts(k[0], k[1], k[2], k[3]);
}

double masked_class_f1(const Matrix & latents, std::span<const int> labels, std::span<const Split> split,
                       std::size_t cls, std::span<const std::size_t> columns, const ProbeConfig & fit) {
    check_inputs(latents, labels, split);
    const auto rows = train_rows(split);
    require_two_classes(labels, rows);
    const Matrix x = gather(latents, rows, columns);
    ProbeConfig cfg = fit;
    cfg.l1_coeff = 0.0;
    const Fit f = fit_one_vs_rest(x, labels, rows, cls, 0.0, cfg);

    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t r = 0; r < latents.rows(); ++r) {
        if (split[r] != Split::test) {
            continue;
        }
        double logit = f.b[0];
        for (std::size_t j = 0; j < columns.size(); ++j) {
            logit += f.w[j] * latents(r, columns[j]);
        }
        const bool pred = logit > 0.0;
        const bool actual = labels[r] == static_cast<int>(cls);
        (pred ? (actual ? tp : fp) : (actual ? fn : tn))++;
    }
    if (tp + fp + fn + tn == 0) {
        throw ProbeError("empty test split");
    }
    return ClassEval::from_counts(tp, fp, fn, tn).f1;
}

std::vector<KSparsePoint> k_sparse_curve(const Matrix & latents, std::span<const int> labels,
                                         std::span<const Split> split, const KSparseSettings & settings) {
    if (settings.k_max == 0 || settings.k_max > latents.cols()) {
        throw std::out_of_range("k_max must lie in [1, H]");
    }
    ProbeConfig l1cfg = settings.fit;
    l1cfg.kind = ProbeKind::one_vs_rest;
    l1cfg.l1_coeff = settings.l1_coeff;
    const ProbeModel full = train_probe(latents, labels, split, l1cfg);

    ProbeConfig refit = l1cfg;
    refit.l1_coeff = 0.0;
    std::vector<KSparsePoint> curve;
    for (std::size_t k = 1; k <= settings.k_max; ++k) {
        KSparsePoint pt;
        pt.k = k;
        pt.mask = select_k_sparse(full, k, settings.selection);
        const ProbeModel masked = train_masked_probe(latents, labels, split, pt.mask, refit);
        const EvalReport ev = evaluate(masked, latents, labels, split);
        for (const auto & c : ev.per_class) {
            pt.f1.push_back(c.f1);
        }
        pt.mean_f1 = ev.mean_f1;
        curve.push_back(std::move(pt));
    }
    return curve;
}

std::vector<LatentMatch> match_latents_to_probe(const SaeModel & sae, const ProbeModel & probe) {
    require_shape(sae.input_dim() == probe.inputs(), "probe must be trained on SAE inputs");
    std::vector<LatentMatch> out;
    for (std::size_t c = 0; c < probe.classes(); ++c) {
        LatentMatch best{0, -2.0};
        for (std::size_t i = 0; i < sae.width(); ++i) {
            const double cs = cosine(sae.w_enc.row(i), probe.weights.row(c));
            if (cs > best.cosine) {
                best = {i, cs};
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace absorb
