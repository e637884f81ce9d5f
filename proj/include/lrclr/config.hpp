#pragma once

// Run configuration and its "key = value" text form.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "lrclr/cross_modal.hpp"
#include "lrclr/encoders.hpp"
#include "lrclr/synth_data.hpp"

namespace lrclr {

struct RunConfig {
    EncoderConfig encoder;
    std::size_t cross_layers = 1;
    std::size_t cross_heads = 4;

    double lambda = 0.5;
    double temperature_global = 0.07;
    double temperature_local = 0.07;

    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double init_std = 0.02;
    std::size_t batch_size = 16;
    std::size_t steps = 2000;
    std::uint64_t seed = 1;

    // synthetic corpus
    std::size_t n_pairs = 4000;
    std::size_t n_findings = 4;
    double noise_sigma = 0.1;
    double train_fraction = 0.8;
    int zero_shot_finding = 3;  // -1: none held out
    LocationWords location = LocationWords::none;
    bool mention_absent = true;
    bool shuffle_segments = false;
    bool trailing_locations = false;
    std::uint64_t data_seed = 7;

    double threshold = 0.5;

    std::string corpus_path = "corpus.tsv";
    std::string checkpoint_path = "model.lrck";
    std::string log_path = "train.log";

    bool residual_rollout = false;
    bool symmetric_local = false;
    bool keep_duplicates = false;

    CrossModalConfig cross() const { return {encoder.d_model, cross_layers, cross_heads}; }

    GeneratorConfig generator() const {
        GeneratorConfig g;
        g.seed = data_seed;
        g.n_pairs = n_pairs;
        g.noise_sigma = noise_sigma;
        g.image_size = encoder.image_size;
        g.patch_size = encoder.patch_size;
        g.location = location;
        g.mention_absent = mention_absent;
        g.shuffle_segments = shuffle_segments;
        g.trailing_locations = trailing_locations;
        g.unmentioned = zero_shot_findings();
        return g;
    }

    std::vector<int> zero_shot_findings() const {
        if (zero_shot_finding < 0) return {};
        return {zero_shot_finding};
    }

    void validate() const {
        encoder.validate();
        cross().validate();
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
        if (!(temperature_global > 0.0) || !(temperature_local > 0.0)) throw ConfigError("temperatures must be positive");
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for contrastive training");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
        if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
        if (n_findings == 0 || n_findings > 4) throw ConfigError("n_findings must be between 1 and 4");
        if (zero_shot_finding >= static_cast<int>(n_findings)) throw ConfigError("zero_shot_finding is not a finding id");
        if (encoder.patch_size % 2 != 0) throw ConfigError("patch_size must be even for the synthetic motifs");
        if (required_vocab(generator()) > encoder.vocab_size) {
            throw ConfigError("vocab_size " + std::to_string(encoder.vocab_size) + " is smaller than the " +
                              std::to_string(required_vocab(generator())) + " words the corpus uses");
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Shortest text that reads back to the same double.
inline std::string format_real(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError("config: bad value '" + text + "' for " + key);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "on") return true;
    if (text == "false" || text == "0" || text == "off") return false;
    throw ConfigError("config: bad boolean '" + text + "' for " + key);
}

inline const char* location_name(LocationWords w) {
    switch (w) {
        case LocationWords::none: return "none";
        case LocationWords::quadrant: return "quadrant";
        case LocationWords::patch: return "patch";
    }
    return "none";
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v) { c.*member = parse_value<T>("", v); },
            [member](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return format_real(c.*member);
                else return std::to_string(c.*member);
            }};
}

template <typename T>
Field encoder_field(T EncoderConfig::*member) {
    return {[member](RunConfig& c, const std::string& v) { c.encoder.*member = parse_value<T>("", v); },
            [member](const RunConfig& c) { return std::to_string(c.encoder.*member); }};
}

inline Field bool_field(bool RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v) { c.*member = parse_bool("", v); },
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

inline Field string_field(std::string RunConfig::*member) {
    return {[member](RunConfig& c, const std::string& v) { c.*member = v; },
            [member](const RunConfig& c) { return c.*member; }};
}

// Ordered so that to_text() is stable.
inline const std::vector<std::pair<std::string, Field>>& config_fields() {
    static const std::vector<std::pair<std::string, Field>> fields{
        {"image_size", encoder_field(&EncoderConfig::image_size)},
        {"patch_size", encoder_field(&EncoderConfig::patch_size)},
        {"d_model", encoder_field(&EncoderConfig::d_model)},
        {"n_layers", encoder_field(&EncoderConfig::n_layers)},
        {"n_heads", encoder_field(&EncoderConfig::n_heads)},
        {"vocab_size", encoder_field(&EncoderConfig::vocab_size)},
        {"max_context", encoder_field(&EncoderConfig::max_context)},
        {"cross_layers", number_field(&RunConfig::cross_layers)},
        {"cross_heads", number_field(&RunConfig::cross_heads)},
        {"lambda", number_field(&RunConfig::lambda)},
        {"temperature_global", number_field(&RunConfig::temperature_global)},
        {"temperature_local", number_field(&RunConfig::temperature_local)},
        {"learning_rate", number_field(&RunConfig::learning_rate)},
        {"beta1", number_field(&RunConfig::beta1)},
        {"beta2", number_field(&RunConfig::beta2)},
        {"adam_epsilon", number_field(&RunConfig::adam_epsilon)},
        {"init_std", number_field(&RunConfig::init_std)},
        {"batch_size", number_field(&RunConfig::batch_size)},
        {"steps", number_field(&RunConfig::steps)},
        {"seed", number_field(&RunConfig::seed)},
        {"n_pairs", number_field(&RunConfig::n_pairs)},
        {"n_findings", number_field(&RunConfig::n_findings)},
        {"noise_sigma", number_field(&RunConfig::noise_sigma)},
        {"train_fraction", number_field(&RunConfig::train_fraction)},
        {"zero_shot_finding", number_field(&RunConfig::zero_shot_finding)},
        {"location",
         {[](RunConfig& c, const std::string& v) {
              if (v == "none") c.location = LocationWords::none;
              else if (v == "quadrant") c.location = LocationWords::quadrant;
              else if (v == "patch") c.location = LocationWords::patch;
              else throw ConfigError("config: location must be none, quadrant or patch, got '" + v + "'");
          },
          [](const RunConfig& c) { return std::string(location_name(c.location)); }}},
        {"mention_absent", bool_field(&RunConfig::mention_absent)},
        {"shuffle_segments", bool_field(&RunConfig::shuffle_segments)},
        {"trailing_locations", bool_field(&RunConfig::trailing_locations)},
        {"data_seed", number_field(&RunConfig::data_seed)},
        {"threshold", number_field(&RunConfig::threshold)},
        {"corpus_path", string_field(&RunConfig::corpus_path)},
        {"checkpoint_path", string_field(&RunConfig::checkpoint_path)},
        {"log_path", string_field(&RunConfig::log_path)},
        {"residual_rollout", bool_field(&RunConfig::residual_rollout)},
        {"symmetric_local", bool_field(&RunConfig::symmetric_local)},
        {"keep_duplicates", bool_field(&RunConfig::keep_duplicates)},
    };
    return fields;
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [name, field] : detail::config_fields()) {
        if (name == key) {
            try {
                field.set(cfg, value);
            } catch (const ConfigError&) {
                throw ConfigError("config: bad value '" + value + "' for " + key);
            }
            return;
        }
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

// Applies "key = value" lines; '#' starts a comment, blank lines are skipped.
inline void apply_config_text(RunConfig& cfg, std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

// "key=value" as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    apply_config_text(cfg, is);
    return cfg;
}

// Every field, one "key = value" line each, in a fixed order.
inline std::string config_to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [name, field] : detail::config_fields()) out += name + " = " + field.get(cfg) + '\n';
    return out;
}

}  // namespace lrclr
