#pragma once

// Global (symmetric InfoNCE) and local (image-to-text InfoNCE) contrastive
// losses and their weighted sum. Inputs are row-aligned [N x d] blocks of
// unit-norm embeddings: row i of the image block is paired with row i of the
// text block. Both losses sum over the batch.

#include <string>

#include "lrclr/tensor.hpp"

namespace lrclr {

// S[i][k] = (a_i . b_k) / temperature
inline Tensor similarity_matrix(Tape& tape, const Tensor& a, const Tensor& b, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
    if (a.cols() != b.cols() || a.rows() != b.rows()) {
        throw ShapeError("similarity_matrix: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    return tape.scale(tape.matmul_nt(a, b), 1.0 / temperature);
}

// sum_i -log softmax(S[i, :])[i]
inline Tensor row_cross_entropy(Tape& tape, const Tensor& sim) {
    return tape.sum(tape.sub(tape.logsumexp_rows(sim), tape.diagonal(sim)));
}

// sum_i -log( exp(v_i.t_i / tau) / sum_k exp(v_i.t_k / tau) ). With
// symmetric = true the text-to-image direction is averaged in.
inline Tensor local_contrastive(Tape& tape, const Tensor& v_l, const Tensor& t_l, double temperature,
                                bool symmetric = false) {
    const Tensor sim = similarity_matrix(tape, v_l, t_l, temperature);
    const Tensor image_to_text = row_cross_entropy(tape, sim);
    if (!symmetric) return image_to_text;
    return tape.scale(tape.add(image_to_text, row_cross_entropy(tape, tape.transpose(sim))), 0.5);
}

// Mean of the image-to-text and text-to-image cross-entropies.
inline Tensor global_contrastive(Tape& tape, const Tensor& v_g, const Tensor& t_g, double temperature) {
    const Tensor sim = similarity_matrix(tape, v_g, t_g, temperature);
    return tape.scale(tape.add(row_cross_entropy(tape, sim), row_cross_entropy(tape, tape.transpose(sim))), 0.5);
}

struct BatchEmbeddings {
    Tensor v_g, t_g, v_l, t_l;  // [N x d] each
    double temperature_global = 0.07;
    double temperature_local = 0.07;
    double lambda = 0.5;
    bool symmetric_local = false;

    void validate() const {
        const auto same = [&](const Tensor& t) { return t.shape() == v_g.shape(); };
        if (v_g.rank() != 2 || !same(t_g) || !same(v_l) || !same(t_l)) {
            throw ShapeError("batch embeddings: blocks " + shape_string(v_g.shape()) + ", " +
                             shape_string(t_g.shape()) + ", " + shape_string(v_l.shape()) + ", " +
                             shape_string(t_l.shape()) + " must agree");
        }
        if (!(temperature_global > 0.0) || !(temperature_local > 0.0)) throw ConfigError("temperatures must be positive");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    }
};

struct LossTerms {
    Tensor global;
    Tensor local;
    Tensor total;
};

// L = L_global + lambda * L_local
inline LossTerms combined_loss(Tape& tape, const BatchEmbeddings& batch) {
    batch.validate();
    LossTerms terms;
    terms.global = global_contrastive(tape, batch.v_g, batch.t_g, batch.temperature_global);
    terms.local = local_contrastive(tape, batch.v_l, batch.t_l, batch.temperature_local, batch.symmetric_local);
    terms.total = tape.add(terms.global, tape.scale(terms.local, batch.lambda));
    return terms;
}

}  // namespace lrclr
