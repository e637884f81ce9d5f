#pragma once

// Cross-modality transformer over [image class; selected regions; text
// class; text tokens]. Emits the local class embeddings v_l (image class
// position) and t_l (text class position), plus the text-class attention
// paid to each selected region, averaged over layers and heads.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lrclr/layers.hpp"
#include "lrclr/region_select.hpp"
#include "lrclr/tensor.hpp"

namespace lrclr {

enum class Modality : std::size_t { image = 0, text = 1 };

struct CrossModalConfig {
    std::size_t d_model = 32;
    std::size_t n_layers = 1;
    std::size_t n_heads = 4;

    void validate() const {
        if (n_layers == 0) throw ConfigError("cross-modal depth must be at least 1");
        if (n_heads == 0 || d_model % n_heads != 0) {
            throw ConfigError("cross-modal d_model " + std::to_string(d_model) + " is not divisible by " +
                              std::to_string(n_heads) + " heads");
        }
    }
};

struct CrossModalInput {
    Tensor image_rows;              // [1 + S x d], row 0 = image class token
    Tensor text_rows;               // [1 + T x d], row 0 = text class token
    std::vector<Modality> modality_tags;

    CrossModalInput() = default;
    CrossModalInput(Tensor image, Tensor text) : image_rows(std::move(image)), text_rows(std::move(text)) {
        modality_tags.assign(image_rows.rows(), Modality::image);
        modality_tags.insert(modality_tags.end(), text_rows.rows(), Modality::text);
    }

    std::size_t regions() const { return image_rows.rows() == 0 ? 0 : image_rows.rows() - 1; }

    void validate() const {
        if (image_rows.rows() < 1 || text_rows.rows() < 1) {
            throw ContractError("cross-modal input needs an image class row and a text class row");
        }
        if (image_rows.cols() != text_rows.cols()) {
            throw ShapeError("cross-modal input: image rows " + shape_string(image_rows.shape()) + " vs text rows " +
                             shape_string(text_rows.shape()));
        }
        if (modality_tags.size() != image_rows.rows() + text_rows.rows()) {
            throw ContractError("cross-modal input: tag count does not match row count");
        }
        for (std::size_t i = 0; i < modality_tags.size(); ++i) {
            const Modality expect = i < image_rows.rows() ? Modality::image : Modality::text;
            if (modality_tags[i] != expect) throw ContractError("cross-modal input: tags out of order");
        }
    }
};

struct LocalEmbeddings {
    Tensor v_l;  // [1 x d], unit norm
    Tensor t_l;  // [1 x d], unit norm
    // Text-class attention on each selected region, mean over layers and
    // heads; not renormalised (the class and text columns take the rest).
    std::vector<double> interp_attention;
    bool empty_regions = false;
    bool degenerate = false;
};

struct CrossModalTransformer {
    Tensor type_embedding;  // [2 x d], row per Modality
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
    Tensor image_projection;  // [d x d]
    Tensor text_projection;   // [d x d]

    CrossModalTransformer() = default;
    explicit CrossModalTransformer(const CrossModalConfig& cfg)
        : type_embedding(Tensor::zeros({2, cfg.d_model}, true)),
          final_norm(cfg.d_model),
          image_projection(Tensor::zeros({cfg.d_model, cfg.d_model}, true)),
          text_projection(Tensor::zeros({cfg.d_model, cfg.d_model}, true)) {
        cfg.validate();
        for (std::size_t l = 0; l < cfg.n_layers; ++l) blocks.emplace_back(cfg.d_model);
    }

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".type_embedding", type_embedding);
        for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(prefix + ".block" + std::to_string(l), fn);
        final_norm.visit(prefix + ".final_norm", fn);
        fn(prefix + ".image_projection", image_projection);
        fn(prefix + ".text_projection", text_projection);
    }

    LocalEmbeddings fuse(Tape& tape, const CrossModalConfig& cfg, const CrossModalInput& input) const {
        input.validate();
        const std::size_t n_image = input.image_rows.rows();
        const std::size_t regions = n_image - 1;

        std::vector<std::size_t> tags;
        tags.reserve(input.modality_tags.size());
        for (Modality m : input.modality_tags) tags.push_back(static_cast<std::size_t>(m));
        Tensor x = tape.add(tape.concat_rows({input.image_rows, input.text_rows}), tape.gather_rows(type_embedding, tags));

        LocalEmbeddings out;
        out.empty_regions = regions == 0;
        out.interp_attention.assign(regions, 0.0);
        std::size_t maps = 0;
        for (const auto& block : blocks) {
            std::vector<Tensor> heads;
            x = block.forward(tape, x, cfg.n_heads, &heads);
            for (const auto& a : heads) {
                for (std::size_t r = 0; r < regions; ++r) out.interp_attention[r] += a(n_image, 1 + r);
                ++maps;
            }
        }
        for (auto& v : out.interp_attention) v /= static_cast<double>(maps);

        const Tensor normed = final_norm(tape, x);
        bool deg_image = false, deg_text = false;
        out.v_l = tape.l2_normalize_rows(tape.matmul(tape.row(normed, 0), image_projection), &deg_image);
        out.t_l = tape.l2_normalize_rows(tape.matmul(tape.row(normed, n_image), text_projection), &deg_text);
        out.degenerate = deg_image || deg_text;
        return out;
    }
};

struct RankedRegion {
    std::size_t patch;
    double score;
    bool operator==(const RankedRegion&) const = default;
};

// Sorts regions by descending score, ascending patch index on ties. Scores
// are renormalised to sum to one when their total is positive.
inline std::vector<RankedRegion> rank_by_score(std::span<const std::size_t> patches, std::span<const double> scores) {
    if (patches.size() != scores.size()) throw ContractError("rank_regions: patch/score count mismatch");
    double total = 0.0;
    for (double s : scores) total += s;
    std::vector<RankedRegion> ranked;
    for (std::size_t i = 0; i < patches.size(); ++i) ranked.push_back({patches[i], total > 0.0 ? scores[i] / total : scores[i]});
    std::sort(ranked.begin(), ranked.end(), [](const RankedRegion& a, const RankedRegion& b) {
        return a.score != b.score ? a.score > b.score : a.patch < b.patch;
    });
    return ranked;
}

inline std::vector<RankedRegion> rank_regions(const LocalEmbeddings& emb, const RegionSelection& selection) {
    if (emb.interp_attention.size() != selection.selected.size()) {
        throw ContractError("rank_regions: selection does not match the fused input");
    }
    return rank_by_score(selection.selected, emb.interp_attention);
}

}  // namespace lrclr
