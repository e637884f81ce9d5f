#pragma once

// Synthetic paired image/text corpus with planted findings.
//
// Each finding is a fixed motif (upper-half pattern x lower-half pattern)
// named by two attribute words. A generated image is clipped Gaussian noise
// with every present finding blended into its own random patch. The caption
// lists segments in finding-id order (optionally shuffled): "<upper> <lower>
// [location]" for each present finding and, optionally, "no <upper> <lower>"
// for each absent one.
// An image with nothing planted reads "no finding".

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "lrclr/encoders.hpp"

namespace lrclr {

// Word ids of the synthetic vocabulary.
namespace vocab {
inline constexpr Token pad = 0;
inline constexpr Token no = 1;
inline constexpr Token finding = 2;
inline constexpr Token stripes = 3;  // upper half: horizontal stripes
inline constexpr Token checker = 4;  // upper half: checkerboard
inline constexpr Token bars = 5;     // lower half: vertical bars
inline constexpr Token solid = 6;    // lower half: solid fill
inline constexpr Token first_location = 7;
}  // namespace vocab

enum class LocationWords {
    none,      // captions carry no location
    quadrant,  // one of four image quadrants
    patch,     // exact patch index
};

struct FindingSpec {
    int id = 0;
    std::vector<double> motif;  // patch_size x patch_size, row-major, in [0, 1]
    std::vector<Token> pos_template;
    std::vector<Token> neg_template;
};

struct SyntheticPair {
    std::size_t id = 0;
    Image image;
    std::vector<Token> tokens;
    std::vector<int> present_findings;                        // ascending
    std::vector<std::pair<int, std::size_t>> planted_patches;  // (finding id, patch index), ascending by id

    bool has_finding(int f) const {
        return std::find(present_findings.begin(), present_findings.end(), f) != present_findings.end();
    }
    std::size_t planted_patch(int f) const {
        for (const auto& [fid, patch] : planted_patches)
            if (fid == f) return patch;
        throw ContractError("finding " + std::to_string(f) + " is not planted in pair " + std::to_string(id));
    }
    bool operator==(const SyntheticPair&) const = default;
};

inline const std::vector<Token>& no_finding_template() {
    static const std::vector<Token> words{vocab::no, vocab::finding};
    return words;
}

// Motif with the given upper/lower half patterns; patch_size must be even.
inline std::vector<double> compose_motif(std::size_t patch_size, Token upper, Token lower) {
    if (patch_size < 2 || patch_size % 2 != 0) throw ConfigError("motif patch size must be even and >= 2");
    std::vector<double> m(patch_size * patch_size, 0.0);
    const std::size_t half = patch_size / 2;
    for (std::size_t r = 0; r < patch_size; ++r)
        for (std::size_t c = 0; c < patch_size; ++c) {
            double v = 0.0;
            if (r < half) {
                v = upper == vocab::stripes ? static_cast<double>(r % 2 == 0) : static_cast<double>((r + c) % 2 == 0);
            } else {
                v = lower == vocab::bars ? static_cast<double>(c % 2 == 0) : 1.0;
            }
            m[r * patch_size + c] = v;
        }
    return m;
}

// The four attribute combinations, ids 0..3:
//   0 stripes+bars, 1 stripes+solid, 2 checker+bars, 3 checker+solid.
// Positive prompt "<upper> <lower>", negative prompt "no <upper> <lower>".
inline std::vector<FindingSpec> default_findings(std::size_t patch_size, std::size_t count = 4) {
    if (count > 4) throw ConfigError("at most 4 built-in findings are available");
    const Token uppers[2] = {vocab::stripes, vocab::checker};
    const Token lowers[2] = {vocab::bars, vocab::solid};
    std::vector<FindingSpec> out;
    for (std::size_t i = 0; i < count; ++i) {
        const Token up = uppers[i / 2], low = lowers[i % 2];
        out.push_back({static_cast<int>(i), compose_motif(patch_size, up, low), {up, low}, {vocab::no, up, low}});
    }
    return out;
}

inline double motif_distance(const FindingSpec& a, const FindingSpec& b) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.motif.size(); ++i) ss += (a.motif[i] - b.motif[i]) * (a.motif[i] - b.motif[i]);
    return std::sqrt(ss);
}

struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t n_pairs = 4000;
    double noise_sigma = 0.1;
    double presence_probability = 0.5;
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    LocationWords location = LocationWords::none;
    // Absent findings are mentioned through their negative template.
    bool mention_absent = true;
    // Findings whose negative template is never written (zero-shot targets).
    std::vector<int> unmentioned;
    // Segment order: shuffled, or by finding id.
    bool shuffle_segments = false;
    // Location words collected after all segments, ascending, instead of
    // following their finding.
    bool trailing_locations = false;
};

inline std::size_t location_vocab(LocationWords mode, std::size_t n_patches) {
    switch (mode) {
        case LocationWords::none: return 0;
        case LocationWords::quadrant: return 4;
        case LocationWords::patch: return n_patches;
    }
    return 0;
}

// Smallest vocabulary that covers every word the generator can emit.
inline std::size_t required_vocab(const GeneratorConfig& cfg) {
    const std::size_t grid = cfg.image_size / cfg.patch_size;
    return static_cast<std::size_t>(vocab::first_location) + location_vocab(cfg.location, grid * grid);
}

inline Token location_token(LocationWords mode, std::size_t patch, std::size_t grid) {
    if (mode == LocationWords::patch) return vocab::first_location + static_cast<Token>(patch);
    const std::size_t r = patch / grid, c = patch % grid;
    const std::size_t quadrant = (r >= grid / 2 ? 2 : 0) + (c >= grid / 2 ? 1 : 0);
    return vocab::first_location + static_cast<Token>(quadrant);
}

// SplitMix64 finaliser; gives each pair an independent stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Pixels are stored at 1e-3 resolution so the text corpus round-trips exactly.
inline double quantize_pixel(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 1000.0) / 1000.0; }

inline SyntheticPair generate_pair(const GeneratorConfig& cfg, const std::vector<FindingSpec>& findings,
                                   std::size_t index) {
    const std::size_t ps = cfg.patch_size, grid = cfg.image_size / cfg.patch_size;
    std::mt19937_64 rng(mix_seed(cfg.seed, index));
    SyntheticPair pair;
    pair.id = index;
    pair.image = Image(cfg.image_size);

    std::vector<double> noise(cfg.image_size * cfg.image_size, 0.0);
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> normal(0.0, cfg.noise_sigma);
        for (auto& v : noise) v = normal(rng);
    }
    for (std::size_t i = 0; i < noise.size(); ++i) pair.image.pixels[i] = std::clamp(noise[i], 0.0, 1.0);

    std::bernoulli_distribution present(cfg.presence_probability);
    std::vector<std::size_t> free_patches(grid * grid);
    std::iota(free_patches.begin(), free_patches.end(), std::size_t{0});
    std::vector<std::pair<int, std::vector<Token>>> segments;  // (finding id, words)
    std::vector<const FindingSpec*> absent;
    std::vector<Token> locations;
    for (const auto& f : findings) {
        if (!present(rng)) {
            absent.push_back(&f);
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, free_patches.size() - 1);
        const std::size_t slot = pick(rng);
        const std::size_t patch = free_patches[slot];
        free_patches.erase(free_patches.begin() + static_cast<std::ptrdiff_t>(slot));

        const std::size_t r0 = (patch / grid) * ps, c0 = (patch % grid) * ps;
        for (std::size_t r = 0; r < ps; ++r)
            for (std::size_t c = 0; c < ps; ++c) {
                const std::size_t px = (r0 + r) * cfg.image_size + c0 + c;
                pair.image.pixels[px] = std::clamp(f.motif[r * ps + c] + noise[px], 0.0, 1.0);
            }
        pair.present_findings.push_back(f.id);
        pair.planted_patches.emplace_back(f.id, patch);

        std::vector<Token> words = f.pos_template;
        if (cfg.location != LocationWords::none) {
            const Token where = location_token(cfg.location, patch, grid);
            if (cfg.trailing_locations) locations.push_back(where);
            else words.push_back(where);
        }
        segments.emplace_back(f.id, std::move(words));
    }
    for (auto& v : pair.image.pixels) v = quantize_pixel(v);

    if (cfg.mention_absent && !segments.empty()) {
        for (const FindingSpec* f : absent) {
            if (std::find(cfg.unmentioned.begin(), cfg.unmentioned.end(), f->id) == cfg.unmentioned.end()) {
                segments.emplace_back(f->id, f->neg_template);
            }
        }
    }
    if (cfg.shuffle_segments) std::shuffle(segments.begin(), segments.end(), rng);
    else std::sort(segments.begin(), segments.end());
    for (const auto& [id, words] : segments) pair.tokens.insert(pair.tokens.end(), words.begin(), words.end());
    std::sort(locations.begin(), locations.end());
    pair.tokens.insert(pair.tokens.end(), locations.begin(), locations.end());
    if (segments.empty()) pair.tokens = no_finding_template();

    std::sort(pair.present_findings.begin(), pair.present_findings.end());
    std::sort(pair.planted_patches.begin(), pair.planted_patches.end());
    return pair;
}

inline std::vector<SyntheticPair> generate(const GeneratorConfig& cfg, const std::vector<FindingSpec>& findings) {
    if (cfg.n_pairs == 0) throw ConfigError("n_pairs must be at least 1");
    if (!(cfg.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    if (cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0) {
        throw ConfigError("image_size must be divisible by patch_size");
    }
    const std::size_t grid = cfg.image_size / cfg.patch_size;
    if (findings.size() > grid * grid) {
        throw ConfigError(std::to_string(findings.size()) + " findings do not fit in " + std::to_string(grid * grid) +
                          " patches");
    }
    for (const auto& f : findings) {
        if (f.motif.size() != cfg.patch_size * cfg.patch_size) {
            throw ConfigError("finding " + std::to_string(f.id) + " motif does not match patch size");
        }
    }
    std::vector<SyntheticPair> pairs;
    pairs.reserve(cfg.n_pairs);
    for (std::size_t i = 0; i < cfg.n_pairs; ++i) pairs.push_back(generate_pair(cfg, findings, i));
    return pairs;
}

// Recovers the finding ids a caption names as present. Negative templates
// are consumed first so "no <upper> <lower>" is not read as a positive;
// location words are skipped.
inline std::vector<int> findings_in_text(std::span<const Token> tokens, const std::vector<FindingSpec>& findings) {
    const auto matches_at = [&](std::size_t i, const std::vector<Token>& t) {
        return i + t.size() <= tokens.size() &&
               std::equal(t.begin(), t.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
    };
    std::set<int> found;
    std::size_t i = 0;
    while (i < tokens.size()) {
        std::size_t advance = 1;
        for (const auto& f : findings) {
            if (matches_at(i, f.neg_template)) {
                advance = f.neg_template.size();
                break;
            }
            if (matches_at(i, f.pos_template)) {
                found.insert(f.id);
                advance = f.pos_template.size();
                break;
            }
        }
        i += advance;
    }
    return {found.begin(), found.end()};
}

struct CorpusSplit {
    std::vector<SyntheticPair> train;
    std::vector<SyntheticPair> eval;
};

// Seeded shuffle, first round(train_fraction * n) to train, rest to eval.
// Train pairs showing any zero-shot finding are moved to eval, so those
// findings never occur in training images or captions. Both halves keep
// corpus order.
inline CorpusSplit holdout_split(const std::vector<SyntheticPair>& pairs, double train_fraction, std::uint64_t seed,
                                 const std::vector<int>& zero_shot = {}) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, 0xC0FFEE));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pairs.size())));

    std::vector<bool> is_train(pairs.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) {
        const auto& p = pairs[order[i]];
        const bool held = std::any_of(zero_shot.begin(), zero_shot.end(), [&](int f) { return p.has_finding(f); });
        is_train[order[i]] = !held;
    }
    CorpusSplit split;
    for (std::size_t i = 0; i < pairs.size(); ++i) (is_train[i] ? split.train : split.eval).push_back(pairs[i]);
    if (split.train.empty() || split.eval.empty()) throw ConfigError("holdout split left one side empty");
    return split;
}

// ---- corpus text format ----------------------------------------------------
//
// Line 1: "# lrclr-corpus v1". Then one line per pair, tab-separated:
//   id  image_size  pixels  tokens  findings
// pixels: image_size^2 decimals, row-major, space-separated
// tokens: token ids, space-separated
// findings: "finding:patch" items, space-separated ("-" when none)

inline constexpr const char* kCorpusHeader = "# lrclr-corpus v1";

namespace detail {
inline void append_double(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    return parts;
}

template <typename T>
T parse_number(const std::string& s, const char* what) {
    T value{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw InputError(std::string("corpus: bad ") + what + " '" + s + "'");
    }
    return value;
}
}  // namespace detail

inline std::string format_pair(const SyntheticPair& p) {
    std::string line = std::to_string(p.id) + '\t' + std::to_string(p.image.size) + '\t';
    for (std::size_t i = 0; i < p.image.pixels.size(); ++i) {
        if (i) line.push_back(' ');
        detail::append_double(line, p.image.pixels[i]);
    }
    line.push_back('\t');
    for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        if (i) line.push_back(' ');
        line += std::to_string(p.tokens[i]);
    }
    line.push_back('\t');
    if (p.planted_patches.empty()) line.push_back('-');
    for (std::size_t i = 0; i < p.planted_patches.size(); ++i) {
        if (i) line.push_back(' ');
        line += std::to_string(p.planted_patches[i].first) + ':' + std::to_string(p.planted_patches[i].second);
    }
    return line;
}

inline SyntheticPair parse_pair(const std::string& line) {
    const auto fields = detail::split_on(line, '\t');
    if (fields.size() != 5) throw InputError("corpus: expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    SyntheticPair p;
    p.id = detail::parse_number<std::size_t>(fields[0], "id");
    p.image = Image(detail::parse_number<std::size_t>(fields[1], "image size"));
    std::size_t i = 0;
    for (const auto& tok : detail::split_on(fields[2], ' ')) {
        if (i >= p.image.pixels.size()) throw InputError("corpus: too many pixels");
        p.image.pixels[i++] = detail::parse_number<double>(tok, "pixel");
    }
    if (i != p.image.pixels.size()) throw InputError("corpus: too few pixels");
    for (const auto& tok : detail::split_on(fields[3], ' ')) p.tokens.push_back(detail::parse_number<Token>(tok, "token"));
    if (fields[4] != "-") {
        for (const auto& item : detail::split_on(fields[4], ' ')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) throw InputError("corpus: bad finding item '" + item + "'");
            const int f = detail::parse_number<int>(item.substr(0, colon), "finding id");
            const auto patch = detail::parse_number<std::size_t>(item.substr(colon + 1), "patch index");
            p.planted_patches.emplace_back(f, patch);
            p.present_findings.push_back(f);
        }
    }
    std::sort(p.present_findings.begin(), p.present_findings.end());
    std::sort(p.planted_patches.begin(), p.planted_patches.end());
    return p;
}

inline void write_corpus(std::ostream& os, const std::vector<SyntheticPair>& pairs) {
    os << kCorpusHeader << '\n';
    for (const auto& p : pairs) os << format_pair(p) << '\n';
}

inline std::vector<SyntheticPair> read_corpus(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kCorpusHeader) throw InputError("corpus: missing header line");
    std::vector<SyntheticPair> pairs;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        pairs.push_back(parse_pair(line));
    }
    return pairs;
}

}  // namespace lrclr
