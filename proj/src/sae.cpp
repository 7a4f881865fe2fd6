#include "absorb/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace absorb {

std::string Nonlinearity::tag() const { return kind == Kind::relu ? "relu" : "batch_topk"; }

void SaeModel::validate() const {
    require_shape(width() >= 1 && input_dim() >= 1, "SAE needs H >= 1 and d >= 1");
    require_shape(w_dec.rows() == width() && w_dec.cols() == input_dim(), "decoder shape disagrees with encoder");
    require_shape(b_enc.size() == width(), "b_enc length must equal H");
    require_shape(b_dec.size() == input_dim(), "b_dec length must equal d");
    if (nonlinearity.kind == Nonlinearity::Kind::batch_topk &&
        (nonlinearity.k == 0 || nonlinearity.k > width())) {
        throw std::invalid_argument("BatchTopK needs 1 <= k <= H");
    }
    if (!all_finite(w_enc.data()) || !all_finite(w_dec.data()) || !all_finite(b_enc) || !all_finite(b_dec)) {
        throw std::invalid_argument("SAE parameters must be finite");
    }
}

SaeModel SaeModel::zeros(std::size_t width, std::size_t dim, Nonlinearity nl) {
    return {Matrix(width, dim), std::vector<double>(width, 0.0), Matrix(width, dim),
            std::vector<double>(dim, 0.0), nl, {}};
}

SaeModel SaeModel::identity(std::size_t dim) {
    SaeModel m = zeros(dim, dim);
    m.w_enc = Matrix::identity(dim);
    m.w_dec = Matrix::identity(dim);
    m.provenance = "identity";
    return m;
}

Matrix pre_activations(const SaeModel & model, const Matrix & inputs) {
    require_shape(inputs.cols() == model.input_dim(), "encode: input width does not match SAE d");
    Matrix pre = matmul_bt(inputs, model.w_enc);
    for (std::size_t r = 0; r < pre.rows(); ++r) {
        auto row = pre.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] += model.b_enc[i];
        }
    }
    return pre;
}

void apply_nonlinearity(const Nonlinearity & nl, Matrix & pre) {
    auto values = pre.data();
    if (nl.kind == Nonlinearity::Kind::relu) {
        for (double & v : values) {
            v = std::max(v, 0.0);
        }
        return;
    }
    const std::size_t budget = std::min(nl.k * pre.rows(), values.size());
    std::vector<std::size_t> idx;
    idx.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] > 0.0) {
            idx.push_back(i);
        }
    }
    if (idx.size() > budget) {
        auto before = [&](std::size_t a, std::size_t b) {
            return values[a] != values[b] ? values[a] > values[b] : a < b;
        };
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(budget), idx.end(), before);
        idx.resize(budget);
    }
    std::vector<char> keep(values.size(), 0);
    for (std::size_t i : idx) {
        keep[i] = 1;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!keep[i]) {
            values[i] = 0.0;
        }
    }
}

Matrix encode(const SaeModel & model, const Matrix & inputs) {
    Matrix pre = pre_activations(model, inputs);
    apply_nonlinearity(model.nonlinearity, pre);
    return pre;
}

Matrix decode(const SaeModel & model, const Matrix & latents) {
    require_shape(latents.cols() == model.width(), "decode: latent width does not match SAE H");
    Matrix out = matmul(latents, model.w_dec);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += model.b_dec[j];
        }
    }
    return out;
}

std::vector<double> decode_row(const SaeModel & model, std::span<const double> latents) {
    require_shape(latents.size() == model.width(), "decode: latent width does not match SAE H");
    std::vector<double> out = model.b_dec;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        if (latents[i] != 0.0) {
            axpy(latents[i], model.w_dec.row(i), out);
        }
    }
    return out;
}

SaeActivations run_sae(const SaeModel & model, const Matrix & inputs) {
    SaeActivations acts;
    acts.latents = encode(model, inputs);
    acts.reconstruction = decode(model, acts.latents);
    acts.error = Matrix(inputs.rows(), inputs.cols());
    auto in = inputs.data();
    auto rec = acts.reconstruction.data();
    auto err = acts.error.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        err[i] = in[i] - rec[i];
    }
    return acts;
}

LossReport compute_loss(const SaeModel & model, const Matrix & inputs, double l1_coeff) {
    return compute_loss(model, inputs, run_sae(model, inputs), l1_coeff);
}

LossReport compute_loss(const SaeModel & model, const Matrix & inputs, const SaeActivations & acts,
                        double l1_coeff) {
    if (inputs.rows() == 0) {
        throw std::invalid_argument("loss: empty batch");
    }
    if (!(l1_coeff >= 0.0)) {
        throw std::invalid_argument("loss: l1 coefficient must be nonnegative");
    }
    const auto n = static_cast<double>(inputs.rows());
    LossReport rep;
    rep.l1_coeff = l1_coeff;

    double sq = 0.0;
    for (double e : acts.error.data()) {
        sq += e * e;
    }
    rep.recon_mse = sq / n;

    double l1 = 0.0;
    double l0 = 0.0;
    for (double z : acts.latents.data()) {
        l1 += std::abs(z);
        l0 += z > 0.0 ? 1.0 : 0.0;
    }
    rep.sparsity_l1 = l1 / n;
    rep.l0_mean = l0 / n;
    rep.total = rep.recon_mse;
    if (model.nonlinearity.kind == Nonlinearity::Kind::relu) {
        rep.total += l1_coeff * rep.sparsity_l1;
    }

    std::vector<double> mean(inputs.cols(), 0.0);
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        axpy(1.0 / n, inputs.row(r), mean);
    }
    double var = 0.0;
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        auto row = inputs.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double c = row[j] - mean[j];
            var += c * c;
        }
    }
    var /= n;
    if (var > 0.0) {
        rep.explained_variance = 1.0 - rep.recon_mse / var;
    } else {
        rep.explained_variance = rep.recon_mse == 0.0 ? 1.0 : 0.0;
    }
    return rep;
}

}  // namespace absorb
