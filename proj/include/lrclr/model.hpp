#pragma once

// The full model (image tower, text tower, cross-modal module) and its
// batched forward pass: encode, roll out and select regions, fuse each pair,
// and evaluate the combined objective.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrclr/config.hpp"
#include "lrclr/cross_modal.hpp"
#include "lrclr/encoders.hpp"
#include "lrclr/objectives.hpp"
#include "lrclr/region_select.hpp"
#include "lrclr/synth_data.hpp"

namespace lrclr {

struct LrclrModel {
    EncoderConfig encoder_config;
    CrossModalConfig cross_config;
    ImageEncoder image;
    TextEncoder text;
    CrossModalTransformer fusion;

    LrclrModel() = default;
    LrclrModel(const EncoderConfig& enc, const CrossModalConfig& cross)
        : encoder_config(enc), cross_config(cross), image(enc), text(enc), fusion(cross) {
        if (cross.d_model != enc.d_model) throw ConfigError("cross-modal width must equal the encoder width");
    }
    explicit LrclrModel(const RunConfig& cfg) : LrclrModel(cfg.encoder, cfg.cross()) {}

    void visit(const ParamVisitor& fn) {
        image.visit("image", fn);
        text.visit("text", fn);
        fusion.visit("cross", fn);
    }

    // Parameters in a fixed order; the handles alias the model's storage.
    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        visit([&](const std::string& name, Tensor& p) { out.emplace_back(name, p); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, Tensor& p) { n += p.size(); });
        return n;
    }

    void initialize(std::uint64_t seed, double std_dev) {
        std::mt19937_64 rng(mix_seed(seed, 0x1A17));
        initialize_parameters([this](const ParamVisitor& fn) { visit(fn); }, rng, std_dev);
    }

    void zero_grad() {
        visit([](const std::string&, Tensor& p) { p.zero_grad(); });
    }
};

struct ForwardOptions {
    RolloutOptions rollout;
    bool keep_duplicates = false;
    double temperature_global = 0.07;
    double temperature_local = 0.07;
    double lambda = 0.5;
    bool symmetric_local = false;

    static ForwardOptions from(const RunConfig& cfg) {
        ForwardOptions o;
        o.rollout.residual = cfg.residual_rollout;
        o.keep_duplicates = cfg.keep_duplicates;
        o.temperature_global = cfg.temperature_global;
        o.temperature_local = cfg.temperature_local;
        o.lambda = cfg.lambda;
        o.symmetric_local = cfg.symmetric_local;
        return o;
    }
};

struct PairForward {
    EncodedSequence image;
    EncodedSequence text;
    RolloutResult rollout;
    RegionSelection selection;
    LocalEmbeddings local;
};

// Image tower, rollout and selection only.
struct ImageView {
    EncodedSequence encoded;
    RolloutResult rollout;
    RegionSelection selection;
};

inline ImageView encode_and_select(Tape& tape, const LrclrModel& model, const Image& image,
                                   const ForwardOptions& opts) {
    ImageView view;
    view.encoded = model.image.encode(tape, model.encoder_config, image);
    view.rollout = rollout(view.encoded.attention, opts.rollout);
    view.selection = select_regions(view.rollout, opts.keep_duplicates);
    return view;
}

inline LocalEmbeddings fuse_pair(Tape& tape, const LrclrModel& model, const ImageView& image,
                                 const EncodedSequence& text) {
    const CrossModalInput input(reduce_sequence(tape, image.encoded, image.selection), text.tokens);
    return model.fusion.fuse(tape, model.cross_config, input);
}

inline PairForward forward_pair(Tape& tape, const LrclrModel& model, const Image& image, std::span<const Token> tokens,
                                const ForwardOptions& opts) {
    ImageView view = encode_and_select(tape, model, image, opts);
    PairForward out;
    out.text = model.text.encode(tape, model.encoder_config, tokens);
    out.local = fuse_pair(tape, model, view, out.text);
    out.image = std::move(view.encoded);
    out.rollout = std::move(view.rollout);
    out.selection = std::move(view.selection);
    return out;
}

struct BatchForward {
    std::vector<PairForward> pairs;
    BatchEmbeddings embeddings;
    LossTerms loss;
};

inline BatchForward forward_batch(Tape& tape, const LrclrModel& model, std::span<const SyntheticPair* const> batch,
                                  const ForwardOptions& opts) {
    BatchForward out;
    std::vector<Tensor> vg, tg, vl, tl;
    for (const SyntheticPair* p : batch) {
        PairForward f = forward_pair(tape, model, p->image, p->tokens, opts);
        vg.push_back(f.image.global_embedding);
        tg.push_back(f.text.global_embedding);
        vl.push_back(f.local.v_l);
        tl.push_back(f.local.t_l);
        out.pairs.push_back(std::move(f));
    }
    out.embeddings.v_g = tape.concat_rows(vg);
    out.embeddings.t_g = tape.concat_rows(tg);
    out.embeddings.v_l = tape.concat_rows(vl);
    out.embeddings.t_l = tape.concat_rows(tl);
    out.embeddings.temperature_global = opts.temperature_global;
    out.embeddings.temperature_local = opts.temperature_local;
    out.embeddings.lambda = opts.lambda;
    out.embeddings.symmetric_local = opts.symmetric_local;
    out.loss = combined_loss(tape, out.embeddings);
    return out;
}

}  // namespace lrclr
