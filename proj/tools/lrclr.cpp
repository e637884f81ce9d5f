// lrclr: command-line front end.
//
//   lrclr [--config FILE] [--set key=value]... [--print-config] <command>
//
// commands: gen-data, train, eval, heatmap, gradcheck
// exit status: 0 ok, 1 input/checkpoint error, 2 config error, 3 numerical failure

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrclr/checkpoint.hpp"
#include "lrclr/heatmap.hpp"
#include "lrclr/model_gradcheck.hpp"
#include "lrclr/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lrclr;

namespace {

struct Options {
    std::string config_file;
    std::vector<std::string> overrides;
    bool print_config = false;

    std::string out;
    std::size_t pair_id = 0;
    int finding = -1;
    std::string prompt;
    std::string csv_path;
    std::string report_path;
};

void apply_sources(RunConfig& cfg, const Options& opt) {
    if (!opt.config_file.empty()) {
        std::ifstream is(opt.config_file);
        if (!is) throw ConfigError("cannot read config file " + opt.config_file);
        apply_config_text(cfg, is);
    }
    for (const auto& o : opt.overrides) apply_override(cfg, o);
}

RunConfig resolve(RunConfig base, const Options& opt) {
    apply_sources(base, opt);
    base.validate();
    if (opt.print_config) std::cout << config_to_text(base);
    return base;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty() || !fs::is_regular_file(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

int cmd_gen_data(const Options& opt) {
    const RunConfig cfg = resolve(RunConfig{}, opt);
    const std::string path = opt.out.empty() ? cfg.corpus_path : opt.out;
    const auto pairs = generate_corpus(cfg);
    save_corpus(path, pairs);
    const CorpusSplit split = split_corpus(cfg, pairs);
    std::cout << "wrote " << pairs.size() << " pairs to " << path << " (" << split.train.size() << " train, "
              << split.eval.size() << " eval)\n";
    return 0;
}

int cmd_train(const Options& opt) {
    const RunConfig cfg = resolve(RunConfig{}, opt);
    require_file(cfg.corpus_path, "corpus");
    const auto pairs = load_corpus(cfg.corpus_path);
    const CorpusSplit split = split_corpus(cfg, pairs);

    Trainer trainer(cfg);
    std::ostringstream log;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        trainer.run(split.train, &log);
    } catch (const TrainingDiverged& e) {
        write_file_atomic(cfg.log_path, log.str());
        save_checkpoint(cfg.checkpoint_path, make_checkpoint(trainer.model(), cfg, trainer.step()));
        std::cerr << "lrclr: " << e.what() << "; last good checkpoint (step " << trainer.step() << ") saved to "
                  << cfg.checkpoint_path << '\n';
        return 3;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file_atomic(cfg.log_path, log.str());
    save_checkpoint(cfg.checkpoint_path, make_checkpoint(trainer.model(), cfg, trainer.step()));
    const auto& steps = trainer.log();
    std::cout << "trained " << steps.size() << " steps in " << secs << " s; loss " << steps.front().total << " -> "
              << steps.back().total << "; checkpoint " << cfg.checkpoint_path << '\n';
    return 0;
}

// Checkpoint snapshot first, then the config file and --set overrides.
LoadedModel load_model(const Options& opt, RunConfig& cfg) {
    RunConfig probe;
    apply_sources(probe, opt);
    require_file(probe.checkpoint_path, "checkpoint");
    LoadedModel loaded = restore(load_checkpoint(probe.checkpoint_path));
    cfg = resolve(loaded.config, opt);
    return loaded;
}

int cmd_eval(const Options& opt) {
    RunConfig cfg;
    const LoadedModel loaded = load_model(opt, cfg);
    require_file(cfg.corpus_path, "corpus");
    const auto pairs = load_corpus(cfg.corpus_path);
    const CorpusSplit split = split_corpus(cfg, pairs);
    const Evaluation ev = evaluate(loaded.model, cfg, split.eval, prompts_from(findings_for(cfg)));

    std::ostringstream kv;
    write_key_values(kv, ev.report);
    std::cout << kv.str();
    if (!opt.report_path.empty()) write_file_atomic(opt.report_path, kv.str());
    if (!opt.csv_path.empty()) {
        std::ostringstream csv;
        write_csv(csv, ev.report);
        write_file_atomic(opt.csv_path, csv.str());
    }
    return 0;
}

std::vector<Token> parse_tokens(const std::string& text) {
    std::vector<Token> out;
    std::istringstream is(text);
    std::string word;
    while (is >> word) {
        try {
            std::size_t used = 0;
            const long v = std::stol(word, &used);
            if (used != word.size()) throw std::invalid_argument(word);
            out.push_back(static_cast<Token>(v));
        } catch (const std::exception&) {
            throw ConfigError("prompt token '" + word + "' is not an integer id");
        }
    }
    return out;
}

int cmd_heatmap(const Options& opt) {
    RunConfig cfg;
    const LoadedModel loaded = load_model(opt, cfg);
    require_file(cfg.corpus_path, "corpus");
    const auto pairs = load_corpus(cfg.corpus_path);
    const SyntheticPair* pair = nullptr;
    for (const auto& p : pairs)
        if (p.id == opt.pair_id) pair = &p;
    if (!pair) throw ConfigError("corpus has no pair with id " + std::to_string(opt.pair_id));

    std::vector<Token> prompt;
    if (!opt.prompt.empty()) {
        prompt = parse_tokens(opt.prompt);
    } else if (opt.finding >= 0) {
        const auto findings = findings_for(cfg);
        if (static_cast<std::size_t>(opt.finding) >= findings.size()) throw ConfigError("unknown finding id");
        prompt = findings[static_cast<std::size_t>(opt.finding)].pos_template;
    } else {
        prompt = pair->tokens;
    }

    const Heatmap h = compute_heatmap(loaded.model, ForwardOptions::from(cfg), pair->image, prompt);
    const std::string prefix = opt.out.empty() ? "heatmap" : opt.out;
    write_file_atomic(prefix + ".csv", heatmap_regions_csv(h));
    write_file_atomic(prefix + ".rollout.csv", heatmap_rollout_csv(h));
    write_file_atomic(prefix + ".pgm", heatmap_pgm(h));
    std::cout << "wrote " << prefix << ".csv, " << prefix << ".rollout.csv, " << prefix << ".pgm ("
              << h.selected.size() << " selected regions)\n";
    return 0;
}

int cmd_gradcheck(const Options& opt) {
    const RunConfig cfg = resolve(tiny_gradcheck_config(), opt);
    const auto t0 = std::chrono::steady_clock::now();
    const ModelGradcheck r = gradcheck_model(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "coordinates = " << r.parameters << '\n'
              << "max_relative_error = " << r.report.max_relative_error << '\n'
              << "worst = " << r.worst_parameter << '[' << r.report.worst_index << "] analytic "
              << r.report.worst_analytic << " numeric " << r.report.worst_numeric << '\n'
              << "seconds = " << secs << '\n';
    return r.report.max_relative_error < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local region contrastive learning on a synthetic image/text corpus"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Options opt;
    app.add_option("-c,--config", opt.config_file, "key = value config file");
    app.add_option("-s,--set", opt.overrides, "override one config key (key=value), repeatable");
    app.add_flag("--print-config", opt.print_config, "print the resolved config");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    gen->add_option("-o,--out", opt.out, "corpus path (default: corpus_path)");
    auto* train = app.add_subcommand("train", "train on the corpus and write a checkpoint");
    auto* eval = app.add_subcommand("eval", "zero-shot metrics and selection hit rates on the eval split");
    eval->add_option("--csv", opt.csv_path, "also write finding,metric,value CSV");
    eval->add_option("--report", opt.report_path, "also write the key = value report");
    auto* heat = app.add_subcommand("heatmap", "export region scores for one pair and prompt");
    heat->add_option("--pair", opt.pair_id, "pair id in the corpus")->required();
    heat->add_option("--finding", opt.finding, "use this finding's positive prompt");
    heat->add_option("--prompt", opt.prompt, "prompt token ids, space separated");
    heat->add_option("-o,--out", opt.out, "output prefix (default: heatmap)");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full objective on a tiny model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opt);
        if (train->parsed()) return cmd_train(opt);
        if (eval->parsed()) return cmd_eval(opt);
        if (heat->parsed()) return cmd_heatmap(opt);
        if (grad->parsed()) return cmd_gradcheck(opt);
        resolve(RunConfig{}, opt);
        if (!opt.print_config) std::cout << app.help();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "lrclr: config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "lrclr: numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "lrclr: " << e.what() << '\n';
        return 1;
    }
}
