#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "circkit/infer.hpp"

namespace circkit {

struct MetricCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t k = 0;  // number of true positive positions (top-k metric)
};

struct Prf {
    double precision = 0, recall = 0, f1 = 0;
    MetricCounts counts;
};

/// Micro-averaged precision/recall/F1 over all positions at a fixed threshold.
/// Predicted positive iff prob > threshold. Conventions: precision = 0 when no
/// position is predicted positive, f1 = 0 when precision + recall = 0.
template <class T>
Prf position_prf(std::span<const T> probs, const std::vector<std::int64_t>& true_positions,
                 double threshold = 0.5) {
    if (true_positions.empty())
        throw std::invalid_argument("position_prf: no true positions; recall undefined");
    std::set<std::int64_t> truth(true_positions.begin(), true_positions.end());
    Prf r;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(probs.size()); ++i) {
        const bool pred = static_cast<double>(probs[static_cast<std::size_t>(i)]) > threshold;
        const bool is_true = truth.count(i) != 0;
        if (pred && is_true) ++r.counts.tp;
        else if (pred && !is_true) ++r.counts.fp;
        else if (!pred && is_true) ++r.counts.fn;
        else ++r.counts.tn;
    }
    r.counts.k = static_cast<std::int64_t>(truth.size());
    const auto pp = r.counts.tp + r.counts.fp;
    r.precision = pp > 0 ? static_cast<double>(r.counts.tp) / static_cast<double>(pp) : 0.0;
    r.recall = static_cast<double>(r.counts.tp) / static_cast<double>(r.counts.tp + r.counts.fn);
    r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

/// Fraction of true sites recovered among the k highest-probability detected
/// peaks, with k = |true positions|. Peaks come from detect_peaks with an
/// open threshold so every local maximum is a candidate.
template <class T>
double top_k_accuracy(std::span<const T> probs, const std::vector<std::int64_t>& true_positions,
                      int min_separation = 1) {
    if (true_positions.empty()) throw std::invalid_argument("top_k_accuracy: k = 0 is undefined");
    std::set<std::int64_t> truth(true_positions.begin(), true_positions.end());
    const auto k = static_cast<std::int64_t>(truth.size());
    const auto peaks = detect_peaks(probs, 1e-12, min_separation);
    const auto top = top_k_select(peaks, k);
    std::int64_t hit = 0;
    for (const auto& p : top)
        if (truth.count(p.pos)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(k);
}

/// Mean of sensitivity and specificity: (TP/(TP+FN) + TN/(TN+FP)) / 2.
inline double balanced_accuracy(const MetricCounts& c) {
    if (c.tp + c.fn < 1) throw std::invalid_argument("balanced_accuracy: positive class absent");
    if (c.tn + c.fp < 1) throw std::invalid_argument("balanced_accuracy: negative class absent");
    const double sens = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double spec = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    return 0.5 * (sens + spec);
}

/// Checks that precision = recall = top-k accuracy at the threshold where
/// exactly k peaks are predicted. Returns nullopt when no tie-free threshold
/// realizes exactly k predictions (inapplicable, not a failure).
template <class T>
std::optional<bool> pr_equality_consistency(std::span<const T> probs,
                                            const std::vector<std::int64_t>& true_positions,
                                            int min_separation = 1) {
    if (true_positions.empty())
        throw std::invalid_argument("pr_equality_consistency: no true positions");
    std::set<std::int64_t> truth(true_positions.begin(), true_positions.end());
    const auto k = static_cast<std::size_t>(truth.size());
    auto peaks = detect_peaks(probs, 1e-12, min_separation);
    if (peaks.size() < k) return std::nullopt;
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        return a.prob != b.prob ? a.prob > b.prob : a.pos < b.pos;
    });
    if (peaks.size() > k && peaks[k - 1].prob == peaks[k].prob) return std::nullopt;  // tie at boundary
    const double tau = peaks.size() > k ? 0.5 * (peaks[k - 1].prob + peaks[k].prob)
                                        : 0.5 * peaks[k - 1].prob;
    std::int64_t predicted = 0, hits = 0;
    for (const auto& p : peaks)
        if (p.prob > tau) {
            ++predicted;
            if (truth.count(p.pos)) ++hits;
        }
    if (predicted != static_cast<std::int64_t>(k)) return std::nullopt;
    const double precision = static_cast<double>(hits) / static_cast<double>(predicted);
    const double recall = static_cast<double>(hits) / static_cast<double>(k);
    const double topk = top_k_accuracy(probs, true_positions, min_separation);
    return std::abs(precision - recall) <= 1e-12 && std::abs(precision - topk) <= 1e-12;
}

/// Area under the precision-recall curve (step interpolation over distinct
/// thresholds). Separate from position_prf, which reports point metrics at a
/// fixed threshold.
template <class T>
double area_under_pr_curve(std::span<const T> probs, const std::vector<std::int64_t>& true_positions) {
    if (true_positions.empty()) throw std::invalid_argument("area_under_pr_curve: no true positions");
    std::set<std::int64_t> truth(true_positions.begin(), true_positions.end());
    std::vector<std::pair<double, bool>> scored;
    scored.reserve(probs.size());
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(probs.size()); ++i)
        scored.emplace_back(static_cast<double>(probs[static_cast<std::size_t>(i)]), truth.count(i) != 0);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto total_pos = static_cast<double>(truth.size());
    double area = 0, prev_recall = 0;
    std::int64_t tp = 0, pp = 0;
    for (std::size_t i = 0; i < scored.size();) {
        std::size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            if (scored[j].second) ++tp;
            ++pp;
            ++j;
        }
        const double recall = static_cast<double>(tp) / total_pos;
        const double precision = static_cast<double>(tp) / static_cast<double>(pp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

/// Evaluation report: '#'-prefixed metadata block, then one TSV row per
/// (species, task, metric, value).
struct ReportRow {
    std::string species;
    std::string task;
    std::string metric;
    double value = 0;
};

inline void write_report(std::ostream& out, const std::vector<ReportRow>& rows,
                         const std::vector<std::pair<std::string, std::string>>& metadata) {
    for (const auto& [k, v] : metadata) out << "# " << k << ": " << v << '\n';
    out << "# balanced accuracy: mean of sensitivity TP/(TP+FN) and specificity TN/(TN+FP)\n";
    out << "species\ttask\tmetric\tvalue\n";
    for (const auto& r : rows)
        out << r.species << '\t' << r.task << '\t' << r.metric << '\t' << r.value << '\n';
}

}  // namespace circkit
