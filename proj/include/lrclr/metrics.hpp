#pragma once

// Zero-shot scoring and classification metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lrclr/errors.hpp"

namespace lrclr {

// Two-way softmax of the positive vs negative prompt similarity.
inline double zero_shot_probability(double s_pos, double s_neg, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    // e^{a}/(e^{a}+e^{b}) = 1/(1+e^{b-a}), stable for either sign.
    const double diff = (s_neg - s_pos) / temperature;
    if (diff > 0.0) {
        const double e = std::exp(-diff);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(diff));
}

// Mann-Whitney U / (n_pos * n_neg), ties count one half. Computed from
// average ranks. Throws UndefinedMetric when only one class is present.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ContractError("auroc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += l != 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("auroc: needs at least one positive and one negative label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of positives; ranks are 1-based, ties share the mean.
    double rank_sum_x2 = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double tied_rank_x2 = static_cast<double>(i + 1 + j);  // (i+1) + j = first + last rank
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank_sum_x2 += tied_rank_x2;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    const double u = rank_sum_x2 / 2.0 - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

struct ThresholdMetrics {
    double specificity = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // some ratio had a zero denominator and was set to 0
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Predict positive when score >= threshold.
inline ThresholdMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw ContractError("threshold_metrics: scores and labels differ in length");
    ThresholdMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] != 0;
        if (pred && truth) ++m.tp;
        else if (pred) ++m.fp;
        else if (truth) ++m.fn;
        else ++m.tn;
    }
    const auto ratio = [&](std::size_t num, std::size_t den) {
        if (den == 0) {
            m.degenerate = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.specificity = ratio(m.tn, m.tn + m.fp);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    const double denom = m.precision + m.recall;
    m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
    return m;
}

// One (pair, present finding) case: was the planted patch selected, and was
// it ranked first.
struct SelectionCase {
    std::size_t planted_patch = 0;
    std::vector<std::size_t> selected;   // any order
    std::optional<std::size_t> top_ranked;
};

struct HitRates {
    std::optional<double> any;    // planted patch anywhere in the selection
    std::optional<double> rank1;  // planted patch ranked first (when rankings were given)
    std::size_t cases = 0;
};

inline HitRates selection_hit_rate(std::span<const SelectionCase> cases) {
    HitRates out;
    out.cases = cases.size();
    if (cases.empty()) return out;
    std::size_t hits = 0, ranked = 0, top_hits = 0;
    for (const auto& c : cases) {
        hits += std::find(c.selected.begin(), c.selected.end(), c.planted_patch) != c.selected.end();
        if (c.top_ranked) {
            ++ranked;
            top_hits += *c.top_ranked == c.planted_patch;
        }
    }
    out.any = static_cast<double>(hits) / static_cast<double>(cases.size());
    if (ranked) out.rank1 = static_cast<double>(top_hits) / static_cast<double>(ranked);
    return out;
}

struct FindingMetrics {
    int finding_id = 0;
    std::size_t n_pos = 0, n_neg = 0;
    // Absent when the eval slice is single-class.
    std::optional<double> specificity, precision, recall, f1, auroc;
};

struct MetricReport {
    double threshold = 0.5;
    std::vector<FindingMetrics> findings;
    std::optional<double> hit_rate, rank1_hit_rate;
    std::size_t hit_cases = 0;

    // Unweighted mean over findings where the metric is defined.
    std::optional<double> macro(std::optional<double> FindingMetrics::*field, const std::vector<int>& only = {}) const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& f : findings) {
            if (!only.empty() && std::find(only.begin(), only.end(), f.finding_id) == only.end()) continue;
            if (const auto& v = f.*field) {
                total += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return total / static_cast<double>(n);
    }

    const FindingMetrics& finding(int id) const {
        for (const auto& f : findings)
            if (f.finding_id == id) return f;
        throw ContractError("metric report has no finding " + std::to_string(id));
    }
};

inline FindingMetrics finding_metrics(int finding_id, std::span<const double> scores, std::span<const int> labels,
                                      double threshold) {
    FindingMetrics fm;
    fm.finding_id = finding_id;
    for (int l : labels) (l ? fm.n_pos : fm.n_neg) += 1;
    if (fm.n_pos == 0 || fm.n_neg == 0) return fm;
    const auto t = threshold_metrics(scores, labels, threshold);
    fm.specificity = t.specificity;
    fm.precision = t.precision;
    fm.recall = t.recall;
    fm.f1 = t.f1;
    fm.auroc = auroc(scores, labels);
    return fm;
}

namespace detail {
inline std::string format_metric(std::optional<double> v) {
    if (!v) return "NA";
    std::ostringstream os;
    os << std::setprecision(17) << *v;
    return os.str();
}

inline const std::vector<std::pair<const char*, std::optional<double> FindingMetrics::*>>& metric_fields() {
    static const std::vector<std::pair<const char*, std::optional<double> FindingMetrics::*>> fields{
        {"specificity", &FindingMetrics::specificity}, {"precision", &FindingMetrics::precision},
        {"recall", &FindingMetrics::recall},           {"f1", &FindingMetrics::f1},
        {"auroc", &FindingMetrics::auroc}};
    return fields;
}
}  // namespace detail

// "key = value" lines; absent metrics print as NA.
inline void write_key_values(std::ostream& os, const MetricReport& r) {
    os << "threshold = " << detail::format_metric(r.threshold) << '\n';
    for (const auto& f : r.findings) {
        const std::string p = "finding." + std::to_string(f.finding_id) + '.';
        os << p << "n_pos = " << f.n_pos << '\n' << p << "n_neg = " << f.n_neg << '\n';
        for (const auto& [name, field] : detail::metric_fields()) os << p << name << " = " << detail::format_metric(f.*field) << '\n';
    }
    for (const auto& [name, field] : detail::metric_fields()) os << "macro." << name << " = " << detail::format_metric(r.macro(field)) << '\n';
    os << "selection.cases = " << r.hit_cases << '\n';
    os << "selection.hit_rate = " << detail::format_metric(r.hit_rate) << '\n';
    os << "selection.rank1_hit_rate = " << detail::format_metric(r.rank1_hit_rate) << '\n';
}

// "finding,metric,value" rows; macro rows use finding "macro", selection rows "selection".
inline void write_csv(std::ostream& os, const MetricReport& r) {
    os << "finding,metric,value\n";
    for (const auto& f : r.findings) {
        os << f.finding_id << ",n_pos," << f.n_pos << '\n' << f.finding_id << ",n_neg," << f.n_neg << '\n';
        for (const auto& [name, field] : detail::metric_fields()) os << f.finding_id << ',' << name << ',' << detail::format_metric(f.*field) << '\n';
    }
    for (const auto& [name, field] : detail::metric_fields()) os << "macro," << name << ',' << detail::format_metric(r.macro(field)) << '\n';
    os << "selection,hit_rate," << detail::format_metric(r.hit_rate) << '\n';
    os << "selection,rank1_hit_rate," << detail::format_metric(r.rank1_hit_rate) << '\n';
}

}  // namespace lrclr
