#pragma once

// Parameter containers and the pre-norm transformer block shared by the
// image, text and cross-modal encoders.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lrclr/tensor.hpp"

namespace lrclr {

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out], unused when constructed without bias

    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool with_bias = true)
        : weight(Tensor::zeros({in, out}, true)), with_bias_(with_bias) {
        if (with_bias) bias = Tensor::zeros({out}, true);
    }

    bool has_bias() const { return with_bias_; }

    Tensor operator()(Tape& tape, const Tensor& x) const {
        const Tensor y = tape.matmul(x, weight);
        return has_bias() ? tape.add_row(y, bias) : y;
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".weight", weight);
        if (has_bias()) fn(prefix + ".bias", bias);
    }

  private:
    bool with_bias_ = true;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d) : gain(Tensor({d}, std::vector<double>(d, 1.0), true)), bias(Tensor::zeros({d}, true)) {}

    Tensor operator()(Tape& tape, const Tensor& x) const { return tape.layernorm(x, gain, bias); }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".gain", gain);
        fn(prefix + ".bias", bias);
    }
};

struct TransformerBlock {
    LayerNorm norm1;
    Linear query, key, value, out;  // key has no bias: softmax rows are invariant to it
    LayerNorm norm2;
    Linear fc1, fc2;

    TransformerBlock() = default;
    explicit TransformerBlock(std::size_t d)
        : norm1(d), query(d, d), key(d, d, false), value(d, d), out(d, d), norm2(d), fc1(d, 4 * d), fc2(4 * d, d) {}

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        norm1.visit(prefix + ".norm1", fn);
        query.visit(prefix + ".query", fn);
        key.visit(prefix + ".key", fn);
        value.visit(prefix + ".value", fn);
        out.visit(prefix + ".out", fn);
        norm2.visit(prefix + ".norm2", fn);
        fc1.visit(prefix + ".fc1", fn);
        fc2.visit(prefix + ".fc2", fn);
    }

    // x: [N x d]. Unmasked multi-head self-attention followed by a GELU MLP,
    // both as residual branches on layer-normed input. The softmax weight
    // matrix of every head ([N x N]) is appended to *attention when given;
    // those tensors stay part of the graph.
    Tensor forward(Tape& tape, const Tensor& x, std::size_t n_heads, std::vector<Tensor>* attention = nullptr) const {
        const std::size_t d = x.cols();
        const std::size_t d_head = d / n_heads;
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_head));

        const Tensor h = norm1(tape, x);
        const Tensor q = query(tape, h);
        const Tensor k = key(tape, h);
        const Tensor v = value(tape, h);

        std::vector<Tensor> heads;
        heads.reserve(n_heads);
        for (std::size_t head = 0; head < n_heads; ++head) {
            const std::size_t begin = head * d_head;
            const Tensor qh = tape.slice_cols(q, begin, d_head);
            const Tensor kh = tape.slice_cols(k, begin, d_head);
            const Tensor vh = tape.slice_cols(v, begin, d_head);
            const Tensor weights = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dk));
            if (attention) attention->push_back(weights);
            heads.push_back(tape.matmul(weights, vh));
        }
        const Tensor attended = n_heads == 1 ? heads.front() : tape.concat_cols(heads);
        const Tensor x1 = tape.add(x, out(tape, attended));
        const Tensor mlp = fc2(tape, tape.gelu(fc1(tape, norm2(tape, x1))));
        return tape.add(x1, mlp);
    }
};

// Fills every visited parameter: weights and embeddings ~ normal(0, std),
// biases zero, layer-norm gains one. Classification is by name suffix.
inline void initialize_parameters(const std::function<void(const ParamVisitor&)>& visit_all, std::mt19937_64& rng,
                                  double std_dev) {
    std::normal_distribution<double> normal(0.0, std_dev);
    visit_all([&](const std::string& name, Tensor& p) {
        auto values = p.mutable_data();
        const auto ends_with = [&](const char* suffix) {
            const std::string s(suffix);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (ends_with(".gain")) {
            std::fill(values.begin(), values.end(), 1.0);
        } else if (ends_with(".bias")) {
            std::fill(values.begin(), values.end(), 0.0);
        } else {
            for (auto& v : values) v = normal(rng);
        }
    });
}

}  // namespace lrclr
