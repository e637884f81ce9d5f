#pragma once

// End-to-end helpers shared by the command-line tool and the test suites.

#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "lrclr/checkpoint.hpp"
#include "lrclr/evaluate.hpp"
#include "lrclr/train.hpp"

namespace lrclr {

inline std::vector<FindingSpec> findings_for(const RunConfig& cfg) {
    return default_findings(cfg.encoder.patch_size, cfg.n_findings);
}

inline std::vector<SyntheticPair> generate_corpus(const RunConfig& cfg) {
    cfg.validate();
    return generate(cfg.generator(), findings_for(cfg));
}

inline CorpusSplit split_corpus(const RunConfig& cfg, const std::vector<SyntheticPair>& pairs) {
    return holdout_split(pairs, cfg.train_fraction, cfg.data_seed, cfg.zero_shot_findings());
}

inline std::vector<SyntheticPair> load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open corpus " + path.string());
    return read_corpus(is);
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<SyntheticPair>& pairs) {
    std::ostringstream os;
    write_corpus(os, pairs);
    write_file_atomic(path, os.str());
}

struct RunOutcome {
    LrclrModel model;
    std::vector<StepLog> log;
    Evaluation evaluation;
    double seconds = 0.0;
};

// Generates the corpus, trains on the train split and evaluates on the eval
// split. The returned model is a copy of the trained parameters.
inline RunOutcome train_and_evaluate(const RunConfig& cfg) {
    const auto pairs = generate_corpus(cfg);
    const CorpusSplit split = split_corpus(cfg, pairs);
    Trainer trainer(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    trainer.run(split.train);
    const auto t1 = std::chrono::steady_clock::now();
    RunOutcome out;
    out.seconds = std::chrono::duration<double>(t1 - t0).count();
    out.log = trainer.log();
    const auto prompts = prompts_from(findings_for(cfg));
    out.evaluation = evaluate(trainer.model(), cfg, split.eval, prompts);
    out.model = std::move(trainer.model());
    return out;
}

}  // namespace lrclr
