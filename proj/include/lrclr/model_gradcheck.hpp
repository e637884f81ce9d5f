#pragma once

// Finite-difference check of every model parameter through the combined
// objective on a tiny model and a two-pair synthetic batch.

#include <string>
#include <vector>

#include "lrclr/model.hpp"

namespace lrclr {

struct ModelGradcheck {
    GradcheckReport report;
    std::string worst_parameter;
    std::size_t parameters = 0;
};

// A configuration small enough for an exhaustive check: 8x8 images of four
// 4x4 patches, d_model 8, two layers, two heads, batch of two. The larger
// init spread keeps gradients well above finite-difference roundoff.
inline RunConfig tiny_gradcheck_config() {
    RunConfig cfg;
    cfg.encoder.image_size = 8;
    cfg.encoder.patch_size = 4;
    cfg.encoder.d_model = 8;
    cfg.encoder.n_layers = 2;
    cfg.encoder.n_heads = 2;
    cfg.encoder.vocab_size = 16;
    cfg.encoder.max_context = 16;
    cfg.cross_layers = 1;
    cfg.cross_heads = 2;
    cfg.batch_size = 2;
    cfg.n_pairs = 2;
    cfg.init_std = 0.3;
    cfg.temperature_global = 0.5;
    cfg.temperature_local = 0.5;
    return cfg;
}

inline ModelGradcheck gradcheck_model(const RunConfig& cfg, double eps = 1e-5) {
    if (cfg.encoder.d_model > 8) throw ConfigError("gradcheck expects a tiny model (d_model <= 8)");
    cfg.validate();
    LrclrModel model(cfg);
    model.initialize(cfg.seed, cfg.init_std);

    GeneratorConfig gen = cfg.generator();
    gen.n_pairs = cfg.batch_size;
    const auto pairs = generate(gen, default_findings(cfg.encoder.patch_size, cfg.n_findings));
    std::vector<const SyntheticPair*> batch;
    for (const auto& p : pairs) batch.push_back(&p);
    const ForwardOptions opts = ForwardOptions::from(cfg);

    std::vector<std::string> names;
    std::vector<Tensor> leaves;
    for (auto& [name, p] : model.named_parameters()) {
        names.push_back(name);
        leaves.push_back(p);
    }
    ModelGradcheck out;
    out.report = gradcheck([&](Tape& tape) { return forward_batch(tape, model, batch, opts).loss.total; }, leaves, eps);
    out.parameters = out.report.coordinates;
    if (!names.empty()) out.worst_parameter = names[out.report.worst_leaf];
    return out;
}

}  // namespace lrclr
