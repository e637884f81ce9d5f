#pragma once

// Zero-shot evaluation of a trained model against positive/negative prompt
// pairs, plus region-selection hit rates against planted patches.

#include <span>
#include <vector>

#include "lrclr/metrics.hpp"
#include "lrclr/model.hpp"

namespace lrclr {

struct PromptPair {
    int finding_id = 0;
    std::vector<Token> pos_tokens;
    std::vector<Token> neg_tokens;
};

inline std::vector<PromptPair> prompts_from(const std::vector<FindingSpec>& findings) {
    std::vector<PromptPair> out;
    for (const auto& f : findings) out.push_back({f.id, f.pos_template, f.neg_template});
    return out;
}

inline void validate_prompt(const PromptPair& p, const EncoderConfig& cfg) {
    for (const auto* seq : {&p.pos_tokens, &p.neg_tokens}) {
        if (seq->empty()) throw InputError("prompt for finding " + std::to_string(p.finding_id) + " is empty");
        for (Token t : *seq)
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
                throw InputError("prompt token " + std::to_string(t) + " outside vocabulary");
            }
    }
}

inline double dot_rows(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Global text embeddings of a prompt pair, [1 x d] each.
struct PromptEmbedding {
    Tensor pos;
    Tensor neg;
};

inline PromptEmbedding embed_prompt(const LrclrModel& model, const PromptPair& prompt) {
    validate_prompt(prompt, model.encoder_config);
    Tape tape(false);
    return {model.text.encode(tape, model.encoder_config, prompt.pos_tokens).global_embedding,
            model.text.encode(tape, model.encoder_config, prompt.neg_tokens).global_embedding};
}

inline double zero_shot_score(const Tensor& image_embedding, const PromptEmbedding& prompt, double temperature) {
    return zero_shot_probability(dot_rows(image_embedding, prompt.pos), dot_rows(image_embedding, prompt.neg),
                                 temperature);
}

inline double zero_shot_score(const LrclrModel& model, const Image& image, const PromptPair& prompt,
                              double temperature) {
    Tape tape(false);
    const auto enc = model.image.encode(tape, model.encoder_config, image);
    return zero_shot_score(enc.global_embedding, embed_prompt(model, prompt), temperature);
}

struct Evaluation {
    MetricReport report;
    // scores[f][i]: probability for prompt f on eval pair i
    std::vector<std::vector<double>> scores;
};

// Read-only: parameters are never written. Hit rates are computed over every
// (pair, present finding) case: the planted patch must be among the selected
// regions; rank-1 uses the cross-modal ordering of those regions against the
// finding's positive prompt.
inline Evaluation evaluate(const LrclrModel& model, const RunConfig& cfg, std::span<const SyntheticPair> pairs,
                           std::span<const PromptPair> prompts) {
    const ForwardOptions opts = ForwardOptions::from(cfg);
    std::vector<PromptEmbedding> prompt_emb;
    std::vector<EncodedSequence> pos_text;
    for (const auto& p : prompts) {
        prompt_emb.push_back(embed_prompt(model, p));
        Tape tape(false);
        pos_text.push_back(model.text.encode(tape, model.encoder_config, p.pos_tokens));
    }

    Evaluation ev;
    ev.report.threshold = cfg.threshold;
    ev.scores.assign(prompts.size(), std::vector<double>(pairs.size(), 0.0));
    std::vector<SelectionCase> cases;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Tape tape(false);
        const ImageView view = encode_and_select(tape, model, pairs[i].image, opts);
        for (std::size_t f = 0; f < prompts.size(); ++f) {
            ev.scores[f][i] = zero_shot_score(view.encoded.global_embedding, prompt_emb[f], cfg.temperature_global);
        }
        for (const auto& [finding, patch] : pairs[i].planted_patches) {
            SelectionCase c;
            c.planted_patch = patch;
            c.selected = view.selection.selected;
            for (std::size_t f = 0; f < prompts.size(); ++f) {
                if (prompts[f].finding_id != finding) continue;
                const LocalEmbeddings local = fuse_pair(tape, model, view, pos_text[f]);
                const auto ranked = rank_regions(local, view.selection);
                if (!ranked.empty()) c.top_ranked = ranked.front().patch;
            }
            cases.push_back(std::move(c));
        }
    }
    for (std::size_t f = 0; f < prompts.size(); ++f) {
        std::vector<int> labels(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) labels[i] = pairs[i].has_finding(prompts[f].finding_id) ? 1 : 0;
        ev.report.findings.push_back(finding_metrics(prompts[f].finding_id, ev.scores[f], labels, cfg.threshold));
    }
    const HitRates hits = selection_hit_rate(cases);
    ev.report.hit_rate = hits.any;
    ev.report.rank1_hit_rate = hits.rank1;
    ev.report.hit_cases = hits.cases;
    return ev;
}

}  // namespace lrclr
