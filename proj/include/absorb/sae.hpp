#pragma once

// Sparse autoencoder model, forward pass and loss statistics.
//
//   f = sigma(W_enc a + b_enc)
//   a_hat = W_dec f + b_dec
//
// Row i of both w_enc and w_dec belongs to latent i.

#include "absorb/matrix.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace absorb {

struct Nonlinearity {
    enum class Kind { relu, batch_topk };

    Kind kind = Kind::relu;
    std::size_t k = 0;  // BatchTopK only

    static Nonlinearity relu() { return {Kind::relu, 0}; }
    static Nonlinearity batch_topk(std::size_t k) { return {Kind::batch_topk, k}; }

    std::string tag() const;  // "relu" or "batch_topk"
    bool operator==(const Nonlinearity &) const = default;
};

struct SaeModel {
    Matrix w_enc;  // H x d
    std::vector<double> b_enc;
    Matrix w_dec;  // H x d
    std::vector<double> b_dec;
    Nonlinearity nonlinearity;
    std::string provenance;

    std::size_t width() const { return w_enc.rows(); }
    std::size_t input_dim() const { return w_enc.cols(); }

    // Throws ShapeError / std::invalid_argument on broken invariants.
    void validate() const;

    static SaeModel zeros(std::size_t width, std::size_t dim, Nonlinearity nl = Nonlinearity::relu());
    // w_enc = w_dec = I, zero biases.
    static SaeModel identity(std::size_t dim);

    bool operator==(const SaeModel &) const = default;
};

// W_enc a + b_enc for every row.
Matrix pre_activations(const SaeModel & model, const Matrix & inputs);

// Applies the nonlinearity in place. For BatchTopK the k*N largest positive
// entries across the whole batch survive; ties go to the lower flat index.
void apply_nonlinearity(const Nonlinearity & nl, Matrix & pre);

Matrix encode(const SaeModel & model, const Matrix & inputs);
Matrix decode(const SaeModel & model, const Matrix & latents);
std::vector<double> decode_row(const SaeModel & model, std::span<const double> latents);

struct SaeActivations {
    Matrix latents;
    Matrix reconstruction;
    Matrix error;  // input - reconstruction
};

SaeActivations run_sae(const SaeModel & model, const Matrix & inputs);

struct LossReport {
    double recon_mse = 0.0;
    double sparsity_l1 = 0.0;
    double l1_coeff = 0.0;
    double total = 0.0;
    double l0_mean = 0.0;
    double explained_variance = 0.0;
};

// recon_mse and sparsity_l1 are means over rows of the squared error norm and
// of sum |f_i|. The l1 term enters `total` only for ReLU models.
// explained_variance = 1 - recon_mse / (mean squared distance to the batch
// mean); a constant batch reports 1 when reconstructed exactly and 0 otherwise.
LossReport compute_loss(const SaeModel & model, const Matrix & inputs, double l1_coeff);
LossReport compute_loss(const SaeModel & model, const Matrix & inputs, const SaeActivations & acts,
                        double l1_coeff);

}  // namespace absorb
