#pragma once

// Attention rollout and head-wise region selection.
//
// For every head the attention-weight matrices of all layers are multiplied
// in layer order; the class-token row of that product (class column
// dropped) scores each patch. Each head votes for its highest-scoring
// patch, and the votes, deduplicated, become the selected regions.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lrclr/encoders.hpp"
#include "lrclr/tensor.hpp"

namespace lrclr {

struct RolloutOptions {
    // Replace every layer matrix A by 0.5 * A + 0.5 * I before multiplying.
    bool residual = false;
};

struct RolloutResult {
    std::vector<Tensor> per_head_final;                    // K matrices [N x N]
    std::vector<std::vector<double>> per_head_class_row;   // K vectors of length N - 1

    std::size_t heads() const { return per_head_final.size(); }
    std::size_t patches() const { return per_head_class_row.empty() ? 0 : per_head_class_row.front().size(); }
};

struct RegionSelection {
    std::vector<std::size_t> head_argmax;       // one patch index per head
    std::vector<std::size_t> selected;          // patch indices in first-occurrence order
    std::vector<std::vector<double>> scores;    // scores[s][k]: head k rollout score of selected[s]
};

namespace detail {

inline std::vector<double> square_product(const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
    std::vector<double> c(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < n; ++p) {
            const double aip = a[i * n + p];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
        }
    return c;
}

}  // namespace detail

// a_k^final = a_k^1 * a_k^2 * ... * a_k^L for every head k. Operates on the
// recorded values only; nothing is added to any tape.
inline RolloutResult rollout(const AttentionStack& stack, RolloutOptions options = {}) {
    if (stack.layers() == 0 || stack.heads() == 0) throw ContractError("rollout: empty attention stack");
    const std::size_t n = stack.seq_len();
    const std::size_t heads = stack.heads();
    if (n < 2) throw ContractError("rollout: sequence needs a class token and at least one patch");
    for (std::size_t l = 0; l < stack.layers(); ++l) {
        if (stack.weights[l].size() != heads) {
            throw ContractError("rollout: layer " + std::to_string(l) + " has " +
                                std::to_string(stack.weights[l].size()) + " heads, expected " + std::to_string(heads));
        }
        for (const auto& m : stack.weights[l]) {
            if (m.rank() != 2 || m.rows() != n || m.cols() != n) {
                throw ContractError("rollout: layer " + std::to_string(l) + " matrix " + shape_string(m.shape()) +
                                    " does not match " + std::to_string(n) + "x" + std::to_string(n));
            }
        }
    }

    const auto layer_matrix = [&](std::size_t l, std::size_t k) {
        std::vector<double> m(stack.weights[l][k].data().begin(), stack.weights[l][k].data().end());
        if (options.residual) {
            for (auto& v : m) v *= 0.5;
            for (std::size_t i = 0; i < n; ++i) m[i * n + i] += 0.5;
        }
        return m;
    };

    RolloutResult result;
    for (std::size_t k = 0; k < heads; ++k) {
        std::vector<double> acc = layer_matrix(0, k);
        for (std::size_t l = 1; l < stack.layers(); ++l) acc = detail::square_product(acc, layer_matrix(l, k), n);
        result.per_head_class_row.emplace_back(acc.begin() + 1, acc.begin() + static_cast<std::ptrdiff_t>(n));
        result.per_head_final.emplace_back(Shape{n, n}, std::move(acc));
    }
    return result;
}

// Index of the maximum, lowest index on ties.
inline std::size_t argmax_lowest(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

// keep_duplicates = true keeps one entry per head even when heads agree.
inline RegionSelection select_regions(const RolloutResult& roll, bool keep_duplicates = false) {
    RegionSelection sel;
    for (const auto& row : roll.per_head_class_row) {
        if (row.empty()) throw ContractError("select_regions: empty class row");
        sel.head_argmax.push_back(argmax_lowest(row));
    }
    for (std::size_t idx : sel.head_argmax) {
        if (keep_duplicates || std::find(sel.selected.begin(), sel.selected.end(), idx) == sel.selected.end()) {
            sel.selected.push_back(idx);
        }
    }
    for (std::size_t idx : sel.selected) {
        std::vector<double> per_head;
        for (const auto& row : roll.per_head_class_row) per_head.push_back(row[idx]);
        sel.scores.push_back(std::move(per_head));
    }
    return sel;
}

// [class token; selected patch tokens] gathered from the encoder output.
// Patch p lives at sequence row p + 1.
inline Tensor reduce_sequence(Tape& tape, const EncodedSequence& encoded, const RegionSelection& selection) {
    std::vector<std::size_t> rows{0};
    for (std::size_t idx : selection.selected) {
        if (idx + 1 >= encoded.tokens.rows()) {
            throw ContractError("reduce_sequence: patch index " + std::to_string(idx) + " out of range for " +
                                std::to_string(encoded.tokens.rows() - 1) + " patches");
        }
        rows.push_back(idx + 1);
    }
    return tape.gather_rows(encoded.tokens, rows);
}

}  // namespace lrclr
