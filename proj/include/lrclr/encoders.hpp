#pragma once

// Patch-based image encoder and token-based text encoder. Both prepend a
// learned class token, add learned positional embeddings, run pre-norm
// transformer blocks and keep every layer's per-head attention weights.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrclr/layers.hpp"
#include "lrclr/tensor.hpp"

namespace lrclr {

using Token = std::int32_t;

struct EncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t d_model = 32;
    std::size_t n_layers = 3;
    std::size_t n_heads = 4;
    std::size_t vocab_size = 32;
    std::size_t max_context = 16;

    // Reference full-size setting (224px ViT-B/32-style image tower, 12
    // layers of width 512 with 8 heads, 77-token context).
    static EncoderConfig full_scale() { return {224, 32, 512, 12, 8, 49408, 77}; }

    std::size_t d_head() const { return d_model / n_heads; }
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t n_patches() const { return grid() * grid(); }
    std::size_t patch_pixels() const { return patch_size * patch_size; }

    void validate() const {
        if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
            throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                              std::to_string(patch_size));
        }
        if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
            throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        }
        if (n_layers == 0) throw ConfigError("n_layers must be at least 1");
        if (max_context < 2) throw ConfigError("max_context must be at least 2");
        if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    }
};

// Square grayscale grid, row-major.
struct Image {
    std::size_t size = 0;
    std::vector<double> pixels;

    Image() = default;
    explicit Image(std::size_t side, double fill = 0.0) : size(side), pixels(side * side, fill) {}

    double& at(std::size_t r, std::size_t c) { return pixels[r * size + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * size + c]; }
    bool operator==(const Image&) const = default;
};

// Per-layer, per-head attention weights: weights[layer][head] is [N x N].
struct AttentionStack {
    std::vector<std::vector<Tensor>> weights;

    std::size_t layers() const { return weights.size(); }
    std::size_t heads() const { return weights.empty() ? 0 : weights.front().size(); }
    std::size_t seq_len() const { return weights.empty() || weights.front().empty() ? 0 : weights.front().front().rows(); }

    // Largest deviation of any row sum from 1 (and of any entry outside [0, 1]).
    double stochastic_error() const {
        double worst = 0.0;
        for (const auto& layer : weights)
            for (const auto& m : layer) {
                const std::size_t n = m.cols();
                for (std::size_t i = 0; i < m.rows(); ++i) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double v = m(i, j);
                        total += v;
                        if (v < 0.0) worst = std::max(worst, -v);
                        if (v > 1.0) worst = std::max(worst, v - 1.0);
                    }
                    worst = std::max(worst, std::abs(total - 1.0));
                }
            }
        return worst;
    }
};

struct EncodedSequence {
    Tensor tokens;            // [N x d], row 0 is the class token
    Tensor class_embedding;   // [1 x d], row 0 of tokens
    Tensor global_embedding;  // [1 x d], projected class embedding, unit norm
    AttentionStack attention;
    bool truncated = false;   // text only: input exceeded max_context - 1
    bool degenerate = false;  // global embedding had ~zero norm before normalisation
};

// Splits the image into row-major square patches, [P x patch_size^2], with
// pixel values clamped to [0, 1].
inline Tensor patchify(const Image& image, std::size_t patch_size) {
    if (patch_size == 0 || image.size == 0 || image.size % patch_size != 0) {
        throw ConfigError("patchify: image size " + std::to_string(image.size) + " not divisible by patch size " +
                          std::to_string(patch_size));
    }
    if (image.pixels.size() != image.size * image.size) throw InputError("patchify: pixel count does not match size");
    const std::size_t grid = image.size / patch_size;
    const std::size_t pp = patch_size * patch_size;
    std::vector<double> out(grid * grid * pp);
    for (std::size_t pr = 0; pr < grid; ++pr)
        for (std::size_t pc = 0; pc < grid; ++pc) {
            const std::size_t patch = pr * grid + pc;
            for (std::size_t r = 0; r < patch_size; ++r)
                for (std::size_t c = 0; c < patch_size; ++c)
                    out[patch * pp + r * patch_size + c] =
                        std::clamp(image.at(pr * patch_size + r, pc * patch_size + c), 0.0, 1.0);
        }
    return Tensor({grid * grid, pp}, std::move(out));
}

namespace detail {

inline EncodedSequence run_tower(Tape& tape, const Tensor& sequence, const std::vector<TransformerBlock>& blocks,
                                 const LayerNorm& final_norm, const Tensor& projection, std::size_t n_heads) {
    EncodedSequence enc;
    Tensor x = sequence;
    enc.attention.weights.reserve(blocks.size());
    for (const auto& block : blocks) {
        std::vector<Tensor> heads;
        x = block.forward(tape, x, n_heads, &heads);
        enc.attention.weights.push_back(std::move(heads));
    }
    enc.tokens = final_norm(tape, x);
    enc.class_embedding = tape.row(enc.tokens, 0);
    enc.global_embedding = tape.l2_normalize_rows(tape.matmul(enc.class_embedding, projection), &enc.degenerate);
    return enc;
}

}  // namespace detail

struct ImageEncoder {
    Linear patch_embed;       // patch pixels -> d
    Tensor class_token;       // [1 x d]
    Tensor positions;         // [(P + 1) x d]
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
    Tensor projection;        // [d x d]

    ImageEncoder() = default;
    explicit ImageEncoder(const EncoderConfig& cfg)
        : patch_embed(cfg.patch_pixels(), cfg.d_model),
          class_token(Tensor::zeros({1, cfg.d_model}, true)),
          positions(Tensor::zeros({cfg.n_patches() + 1, cfg.d_model}, true)),
          final_norm(cfg.d_model),
          projection(Tensor::zeros({cfg.d_model, cfg.d_model}, true)) {
        cfg.validate();
        for (std::size_t l = 0; l < cfg.n_layers; ++l) blocks.emplace_back(cfg.d_model);
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        patch_embed.visit(prefix + ".patch_embed", fn);
        fn(prefix + ".class_token", class_token);
        fn(prefix + ".positions", positions);
        for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(prefix + ".block" + std::to_string(l), fn);
        final_norm.visit(prefix + ".final_norm", fn);
        fn(prefix + ".projection", projection);
    }

    EncodedSequence encode(Tape& tape, const EncoderConfig& cfg, const Image& image) const {
        if (image.size != cfg.image_size) {
            throw ShapeError("encode_image: image is " + std::to_string(image.size) + " px, config expects " +
                             std::to_string(cfg.image_size));
        }
        const Tensor patches = patchify(image, cfg.patch_size);
        const Tensor embedded = patch_embed(tape, patches);
        const Tensor sequence = tape.add(tape.concat_rows({class_token, embedded}), positions);
        return detail::run_tower(tape, sequence, blocks, final_norm, projection, cfg.n_heads);
    }
};

struct TextEncoder {
    Tensor token_embedding;  // [V x d]
    Tensor class_token;      // [1 x d]
    Tensor positions;        // [max_context x d]
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
    Tensor projection;       // [d x d]

    TextEncoder() = default;
    explicit TextEncoder(const EncoderConfig& cfg)
        : token_embedding(Tensor::zeros({cfg.vocab_size, cfg.d_model}, true)),
          class_token(Tensor::zeros({1, cfg.d_model}, true)),
          positions(Tensor::zeros({cfg.max_context, cfg.d_model}, true)),
          final_norm(cfg.d_model),
          projection(Tensor::zeros({cfg.d_model, cfg.d_model}, true)) {
        cfg.validate();
        for (std::size_t l = 0; l < cfg.n_layers; ++l) blocks.emplace_back(cfg.d_model);
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".token_embedding", token_embedding);
        fn(prefix + ".class_token", class_token);
        fn(prefix + ".positions", positions);
        for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(prefix + ".block" + std::to_string(l), fn);
        final_norm.visit(prefix + ".final_norm", fn);
        fn(prefix + ".projection", projection);
    }

    // Bidirectional encoding of [class; tokens]. Input longer than
    // max_context - 1 is truncated and flagged.
    EncodedSequence encode(Tape& tape, const EncoderConfig& cfg, std::span<const Token> tokens) const {
        if (tokens.empty()) throw InputError("encode_text: empty token sequence");
        for (Token t : tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
                throw InputError("encode_text: token id " + std::to_string(t) + " outside vocabulary of " +
                                 std::to_string(cfg.vocab_size));
            }
        }
        const bool truncated = tokens.size() > cfg.max_context - 1;
        const std::size_t n = std::min(tokens.size(), cfg.max_context - 1);
        std::vector<std::size_t> ids(n), pos(n + 1);
        for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::size_t>(tokens[i]);
        for (std::size_t i = 0; i <= n; ++i) pos[i] = i;
        const Tensor embedded = tape.gather_rows(token_embedding, ids);
        const Tensor sequence =
            tape.add(tape.concat_rows({class_token, embedded}), tape.gather_rows(positions, pos));
        EncodedSequence enc = detail::run_tower(tape, sequence, blocks, final_norm, projection, cfg.n_heads);
        enc.truncated = truncated;
        return enc;
    }
};

}  // namespace lrclr
