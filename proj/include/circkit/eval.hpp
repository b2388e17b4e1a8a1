#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "circkit/dataset.hpp"
#include "circkit/metrics.hpp"
#include "circkit/model.hpp"

namespace circkit {

struct SsdEvaluation {
    Prf prf;              // micro-averaged over every position of every window
    double top_k = 0;     // mean per-window top-k accuracy (windows with >= 1 true site)
    double aupr = 0;
    std::int64_t windows = 0;
    std::int64_t windows_with_sites = 0;
};

/// Scores every window, pools positions for micro precision/recall/F1 and
/// AUPR, and averages per-window top-k accuracy.
template <class S>
SsdEvaluation evaluate_ssd(ModelT<S>& model, const std::vector<SsdSample>& samples, double threshold = 0.5,
                           int batch_size = 16) {
    SsdEvaluation ev;
    std::vector<double> all_probs;
    std::vector<std::int64_t> all_truth;
    double topk_acc = 0;
    std::int64_t offset = 0;

    for (std::size_t base = 0; base < samples.size(); base += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(samples.size() - base, static_cast<std::size_t>(batch_size));
        std::vector<TensorT<S>> rows;
        std::vector<std::string> species;
        for (std::size_t i = 0; i < count; ++i) {
            rows.push_back(one_hot_encode<S>(samples[base + i].window, kSsdAlphabet));
            species.push_back(samples[base + i].species);
        }
        auto x = stack(rows);
        auto logits = model.forward_ssd(x, std::span<const std::string>(species));
        for (std::size_t i = 0; i < count; ++i) {
            const auto& sample = samples[base + i];
            const int L = static_cast<int>(sample.window.size());
            std::vector<double> probs(static_cast<std::size_t>(L));
            for (int p = 0; p < L; ++p) probs[static_cast<std::size_t>(p)] = sigmoid_value(logits.at(static_cast<int>(i), p));
            if (!sample.label_positions.empty()) {
                std::vector<std::int64_t> truth(sample.label_positions.begin(), sample.label_positions.end());
                topk_acc += top_k_accuracy(std::span<const double>(probs), truth);
                ++ev.windows_with_sites;
            }
            for (int p : sample.label_positions) all_truth.push_back(offset + p);
            all_probs.insert(all_probs.end(), probs.begin(), probs.end());
            offset += L;
            ++ev.windows;
        }
    }
    ev.prf = position_prf(std::span<const double>(all_probs), all_truth, threshold);
    ev.aupr = area_under_pr_curve(std::span<const double>(all_probs), all_truth);
    ev.top_k = ev.windows_with_sites > 0 ? topk_acc / static_cast<double>(ev.windows_with_sites) : 0.0;
    return ev;
}

struct SspEvaluation {
    MetricCounts counts;
    double balanced_accuracy = 0;
    double precision = 0, recall = 0, f1 = 0;
};

/// Per-sample pairing classification at the given threshold.
template <class S>
SspEvaluation evaluate_ssp(ModelT<S>& model, const std::vector<SspSample>& samples, double threshold = 0.5,
                           int batch_size = 16) {
    SspEvaluation ev;
    for (std::size_t base = 0; base < samples.size(); base += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(samples.size() - base, static_cast<std::size_t>(batch_size));
        std::vector<TensorT<S>> rows;
        std::vector<std::string> species;
        for (std::size_t i = 0; i < count; ++i) {
            rows.push_back(one_hot_encode<S>(samples[base + i].sequence, kSspAlphabet));
            species.push_back(samples[base + i].species);
        }
        auto x = stack(rows);
        auto logits = model.forward_ssp(x, std::span<const std::string>(species));
        for (std::size_t i = 0; i < count; ++i) {
            const bool pred = sigmoid_value(logits.at(static_cast<int>(i))) > threshold;
            const bool truth = samples[base + i].label == 1;
            if (pred && truth) ++ev.counts.tp;
            else if (pred) ++ev.counts.fp;
            else if (truth) ++ev.counts.fn;
            else ++ev.counts.tn;
        }
    }
    ev.balanced_accuracy = balanced_accuracy(ev.counts);
    const auto pp = ev.counts.tp + ev.counts.fp;
    ev.precision = pp > 0 ? static_cast<double>(ev.counts.tp) / static_cast<double>(pp) : 0.0;
    ev.recall = static_cast<double>(ev.counts.tp) / static_cast<double>(ev.counts.tp + ev.counts.fn);
    ev.f1 = (ev.precision + ev.recall) > 0 ? 2 * ev.precision * ev.recall / (ev.precision + ev.recall) : 0.0;
    return ev;
}

/// Groups samples by species, preserving first-seen order.
template <class Sample>
std::pair<std::vector<std::string>, std::vector<std::vector<Sample>>> group_by_species(
    const std::vector<Sample>& samples) {
    std::vector<std::string> order;
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<Sample>> pools;
    for (const auto& s : samples) {
        auto it = index.find(s.species);
        if (it == index.end()) {
            index[s.species] = pools.size();
            order.push_back(s.species);
            pools.emplace_back();
            it = index.find(s.species);
        }
        pools[it->second].push_back(s);
    }
    return {order, pools};
}

}  // namespace circkit
