#include "absorb/trainer.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace absorb {

void TrainConfig::validate() const {
    if (!(l1_coeff >= 0.0) || !std::isfinite(l1_coeff)) {
        throw std::invalid_argument("l1_coeff must be finite and >= 0");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be > 0");
    }
    if (batch_size == 0 || total_samples < batch_size) {
        throw std::invalid_argument("need 1 <= batch_size <= total_samples");
    }
    if (checkpoint_every == 0) {
        throw std::invalid_argument("checkpoint_every must be positive");
    }
}

SaeGradients loss_gradients(const SaeModel & model, const Matrix & inputs, double l1_coeff) {
    const std::size_t n = inputs.rows();
    const std::size_t h = model.width();
    const std::size_t d = model.input_dim();
    require_shape(inputs.cols() == d, "gradients: input width does not match SAE d");
    if (n == 0) {
        throw std::invalid_argument("gradients: empty batch");
    }
    const bool relu = model.nonlinearity.kind == Nonlinearity::Kind::relu;
    const double lambda = relu ? l1_coeff : 0.0;

    Matrix z = pre_activations(model, inputs);
    apply_nonlinearity(model.nonlinearity, z);
    Matrix rec = decode(model, z);

    SaeGradients g{Matrix(h, d), std::vector<double>(h, 0.0), Matrix(h, d), std::vector<double>(d, 0.0)};
    const double scale = 2.0 / static_cast<double>(n);
    std::vector<double> de(d);
    std::vector<double> dpre(h);
    for (std::size_t r = 0; r < n; ++r) {
        auto x = inputs.row(r);
        auto zr = z.row(r);
        auto xr = rec.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            de[j] = scale * (xr[j] - x[j]);
            g.b_dec[j] += de[j];
        }
        for (std::size_t i = 0; i < h; ++i) {
            if (zr[i] > 0.0) {
                axpy(zr[i], de, g.w_dec.row(i));
                // Latents that survived the nonlinearity pass gradient straight through.
                dpre[i] = dot(de, model.w_dec.row(i)) + lambda / static_cast<double>(n);
                axpy(dpre[i], x, g.w_enc.row(i));
                g.b_enc[i] += dpre[i];
            }
        }
    }
    return g;
}

SaeModel init_sae(std::size_t dim, const SaeShape & shape, std::uint64_t seed) {
    SaeModel m = SaeModel::zeros(shape.width, dim, shape.nonlinearity);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(static_cast<double>(dim)));
    for (double & v : m.w_enc.data()) {
        v = normal(rng);
    }
    m.w_dec = m.w_enc;
    m.validate();
    return m;
}

std::string train_provenance(const FeatureDictionary & dict, const FiringSpec & spec, const SaeShape & shape,
                             const TrainConfig & config) {
    std::ostringstream os;
    os.precision(17);
    os << "adam-train d=" << dict.dim << " D=" << dict.count << " dict_seed=" << dict.seed << " H=" << shape.width
       << " nl=" << shape.nonlinearity.tag();
    if (shape.nonlinearity.kind == Nonlinearity::Kind::batch_topk) {
        os << "(k=" << shape.nonlinearity.k << ")";
    }
    os << " l1=" << config.l1_coeff << " lr=" << config.learning_rate << " samples=" << config.total_samples
       << " batch=" << config.batch_size
       << " renorm=" << (config.decoder_norm == DecoderNorm::unit_renorm_each_step ? "unit" : "none")
       << " seed=" << config.seed << " hierarchy_edges=" << spec.hierarchy.size();
    return os.str();
}

namespace {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad, const AdamParams & p, double lr,
              std::size_t t) {
        const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * grad[i];
            v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + p.eps);
        }
    }
};

void renormalize_decoder(SaeModel & model) {
    for (std::size_t i = 0; i < model.width(); ++i) {
        auto row = model.w_dec.row(i);
        const double n = norm(row);
        if (n > 0.0) {
            for (double & v : row) {
                v /= n;
            }
        }
    }
}

}  // namespace

TrainTrace train(const FeatureDictionary & dict, const FiringSpec & spec, const SaeShape & shape,
                 const TrainConfig & config) {
    FeatureSampler sampler(dict, spec, derive_seed(config.seed, 1));
    return train_stream(sampler, dict.dim, shape, config, train_provenance(dict, spec, shape, config));
}

TrainTrace train_on_task(const FeatureDictionary & dict, const FiringSpec & spec, const ClassTask & task,
                         const SaeShape & shape, const TrainConfig & config) {
    TaskSampler sampler(dict, spec, task, derive_seed(config.seed, 1));
    return train_stream(sampler, dict.dim, shape, config,
                        train_provenance(dict, spec, shape, config) + " task_classes=" +
                            std::to_string(task.classes));
}

TrainTrace train_stream(SampleStream & sampler, std::size_t dim, const SaeShape & shape, const TrainConfig & config,
                        const std::string & provenance) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();

    TrainTrace trace;
    trace.model = init_sae(dim, shape, derive_seed(config.seed, 0));
    trace.model.provenance = provenance;
    SaeModel & model = trace.model;
    AdamState s_wenc(model.w_enc.data().size());
    AdamState s_benc(model.b_enc.size());
    AdamState s_wdec(model.w_dec.data().size());
    AdamState s_bdec(model.b_dec.size());

    const std::size_t steps = config.total_samples / config.batch_size;
    std::uint64_t last_index = sampler.stream_index();
    for (std::size_t step = 1; step <= steps; ++step) {
        Matrix batch = sampler.draw_activations(config.batch_size);
        if (sampler.stream_index() <= last_index) {
            throw std::logic_error("sample stream did not advance");
        }
        last_index = sampler.stream_index();

        if (step == 1 || step % config.checkpoint_every == 0 || step == steps) {
            const LossReport rep = compute_loss(model, batch, config.l1_coeff);
            trace.checkpoints.push_back({step, sampler.stream_index(), rep});
            if (!std::isfinite(rep.total) || !std::isfinite(rep.explained_variance)) {
                trace.steps = step;
                trace.samples_seen = sampler.stream_index();
                throw TrainingError("non-finite loss at step " + std::to_string(step), std::move(trace));
            }
        }

        const SaeGradients g = loss_gradients(model, batch, config.l1_coeff);
        if (!all_finite(g.w_enc.data()) || !all_finite(g.w_dec.data())) {
            trace.steps = step;
            trace.samples_seen = sampler.stream_index();
            throw TrainingError("non-finite gradient at step " + std::to_string(step), std::move(trace));
        }
        s_wenc.step(model.w_enc.data(), g.w_enc.data(), config.adam, config.learning_rate, step);
        s_benc.step(model.b_enc, g.b_enc, config.adam, config.learning_rate, step);
        s_wdec.step(model.w_dec.data(), g.w_dec.data(), config.adam, config.learning_rate, step);
        s_bdec.step(model.b_dec, g.b_dec, config.adam, config.learning_rate, step);
        if (config.decoder_norm == DecoderNorm::unit_renorm_each_step) {
            renormalize_decoder(model);
        }
        trace.steps = step;
    }
    trace.samples_seen = sampler.stream_index();
    trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

namespace {

enum class Block { w_enc, b_enc, w_dec, b_dec };

double & param_ref(SaeModel & m, Block b, std::size_t i) {
    switch (b) {
    case Block::w_enc:
        return m.w_enc.data()[i];
    case Block::b_enc:
        return m.b_enc[i];
    case Block::w_dec:
        return m.w_dec.data()[i];
    case Block::b_dec:
        return m.b_dec[i];
    }
    throw std::logic_error("bad block");
}

double grad_ref(const SaeGradients & g, Block b, std::size_t i) {
    switch (b) {
    case Block::w_enc:
        return g.w_enc.data()[i];
    case Block::b_enc:
        return g.b_enc[i];
    case Block::w_dec:
        return g.w_dec.data()[i];
    case Block::b_dec:
        return g.b_dec[i];
    }
    throw std::logic_error("bad block");
}

// Nonzero pattern of the latents, used to detect kink crossings.
std::vector<char> active_pattern(const SaeModel & m, const Matrix & inputs, double margin) {
    Matrix pre = pre_activations(m, inputs);
    Matrix post = pre;
    apply_nonlinearity(m.nonlinearity, post);
    std::vector<char> pattern(pre.data().size());
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        const double p = pre.data()[i];
        pattern[i] = post.data()[i] > 0.0 ? 1 : 0;
        if (std::abs(p) < margin) {
            pattern[i] = 2;  // too close to the ReLU kink
        }
    }
    return pattern;
}

}  // namespace

double grad_check(const SaeModel & model, const Matrix & inputs, double l1_coeff, std::size_t probe_points,
                  std::uint64_t seed) {
    if (probe_points == 0) {
        throw std::invalid_argument("grad_check: probe_points must be >= 1");
    }
    constexpr double kStep = 1e-6;
    const SaeGradients g = loss_gradients(model, inputs, l1_coeff);
    const std::size_t sizes[4] = {model.w_enc.data().size(), model.b_enc.size(), model.w_dec.data().size(),
                                  model.b_dec.size()};
    const std::size_t total = sizes[0] + sizes[1] + sizes[2] + sizes[3];

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    SaeModel work = model;
    double worst = 0.0;
    std::size_t checked = 0;
    std::size_t attempts = 0;
    while (checked < probe_points && attempts < 100 * probe_points) {
        ++attempts;
        std::size_t flat = pick(rng);
        Block block = Block::w_enc;
        for (int b = 0; b < 4; ++b) {
            if (flat < sizes[b]) {
                block = static_cast<Block>(b);
                break;
            }
            flat -= sizes[b];
        }
        double & p = param_ref(work, block, flat);
        const double orig = p;
        p = orig + kStep;
        const auto pattern_plus = active_pattern(work, inputs, kStep);
        const double plus = compute_loss(work, inputs, l1_coeff).total;
        p = orig - kStep;
        const auto pattern_minus = active_pattern(work, inputs, kStep);
        const double minus = compute_loss(work, inputs, l1_coeff).total;
        p = orig;
        bool near_kink = pattern_plus != pattern_minus;
        for (char c : pattern_plus) {
            near_kink = near_kink || c == 2;
        }
        if (near_kink) {
            continue;
        }
        const double numeric = (plus - minus) / (2.0 * kStep);
        const double analytic = grad_ref(g, block, flat);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
        ++checked;
    }
    if (checked == 0) {
        throw std::runtime_error("grad_check: every probed parameter sits on a ReLU kink");
    }
    return worst;
}

}  // namespace absorb
