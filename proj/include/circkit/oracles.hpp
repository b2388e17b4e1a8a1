#pragma once

// Brute-force reference implementations used to cross-check the engine, the
// attention paths, and the metrics. Everything here is written with plain
// loops over flat vectors, independent of the graph ops under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "circkit/common.hpp"
#include "circkit/metrics.hpp"
#include "circkit/model.hpp"
#include "circkit/tensor.hpp"

namespace circkit::oracle {

/// Triple-loop "same"-padded 1-D convolution.
template <class S>
std::vector<S> conv1d_reference(const std::vector<S>& x, int B, int L, int Ci, const std::vector<S>& w,
                                int K, int Co, const std::vector<S>& bias, int dilation) {
    std::vector<S> out(static_cast<std::size_t>(B) * L * Co, S(0));
    const int half = K / 2;
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l)
            for (int o = 0; o < Co; ++o) {
                S acc = bias[static_cast<std::size_t>(o)];
                for (int k = 0; k < K; ++k) {
                    const int src = l + (k - half) * dilation;
                    if (src < 0 || src >= L) continue;
                    for (int c = 0; c < Ci; ++c)
                        acc += x[(static_cast<std::size_t>(b) * L + src) * Ci + c] *
                               w[(static_cast<std::size_t>(k) * Ci + c) * Co + o];
                }
                out[(static_cast<std::size_t>(b) * L + l) * Co + o] = acc;
            }
    return out;
}

/// Double-loop softmax attention on flat row-major matrices.
template <class S>
std::vector<S> attention_reference(const std::vector<S>& q, const std::vector<S>& k,
                                   const std::vector<S>& v, int Lq, int Lk, int d, int dv) {
    std::vector<S> out(static_cast<std::size_t>(Lq) * dv, S(0));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < Lq; ++i) {
        std::vector<double> scores(static_cast<std::size_t>(Lk));
        double mx = -1e300;
        for (int j = 0; j < Lk; ++j) {
            double s = 0;
            for (int t = 0; t < d; ++t)
                s += static_cast<double>(q[static_cast<std::size_t>(i) * d + t]) *
                     static_cast<double>(k[static_cast<std::size_t>(j) * d + t]);
            scores[static_cast<std::size_t>(j)] = s * inv_sqrt_d;
            mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
        }
        double z = 0;
        for (auto& s : scores) {
            s = std::exp(s - mx);
            z += s;
        }
        for (int j = 0; j < Lk; ++j)
            for (int t = 0; t < dv; ++t)
                out[static_cast<std::size_t>(i) * dv + t] += static_cast<S>(
                    scores[static_cast<std::size_t>(j)] / z *
                    static_cast<double>(v[static_cast<std::size_t>(j) * dv + t]));
    }
    return out;
}

/// Exhaustive peak enumeration implementing the same rules as detect_peaks:
/// strict-or-plateau maxima at the leftmost plateau index, threshold filter,
/// greedy suppression by descending probability with lower-index tie-break.
template <class T>
std::vector<Peak> peaks_reference(std::span<const T> probs, double threshold, int min_separation) {
    std::vector<Peak> cand;
    const auto n = static_cast<std::int64_t>(probs.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(probs[static_cast<std::size_t>(i)]);
        if (!(v > threshold)) continue;
        if (i > 0 && static_cast<double>(probs[static_cast<std::size_t>(i - 1)]) >= v) continue;
        std::int64_t j = i;
        while (j + 1 < n && static_cast<double>(probs[static_cast<std::size_t>(j + 1)]) == v) ++j;
        if (j + 1 < n && static_cast<double>(probs[static_cast<std::size_t>(j + 1)]) > v) continue;
        cand.push_back({i, v});
    }
    std::vector<Peak> kept;
    while (!cand.empty()) {
        // repeatedly take the best remaining candidate not blocked by a kept peak
        std::size_t best = 0;
        for (std::size_t c = 1; c < cand.size(); ++c) {
            if (cand[c].prob > cand[best].prob ||
                (cand[c].prob == cand[best].prob && cand[c].pos < cand[best].pos))
                best = c;
        }
        bool blocked = false;
        for (const auto& p : kept)
            if (std::llabs(p.pos - cand[best].pos) < min_separation) blocked = true;
        if (!blocked) kept.push_back(cand[best]);
        cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(best));
    }
    std::sort(kept.begin(), kept.end(), [](const Peak& a, const Peak& b) { return a.pos < b.pos; });
    return kept;
}

/// Confusion-matrix recount for position-level precision/recall/F1.
template <class T>
Prf prf_reference(std::span<const T> probs, const std::vector<std::int64_t>& truth, double threshold) {
    std::set<std::int64_t> ts(truth.begin(), truth.end());
    Prf r;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(probs.size()); ++i) {
        const bool pred = static_cast<double>(probs[static_cast<std::size_t>(i)]) > threshold;
        const bool is_true = ts.count(i) != 0;
        r.counts.tp += pred && is_true;
        r.counts.fp += pred && !is_true;
        r.counts.fn += !pred && is_true;
        r.counts.tn += !pred && !is_true;
    }
    r.precision = (r.counts.tp + r.counts.fp) > 0
                      ? static_cast<double>(r.counts.tp) / static_cast<double>(r.counts.tp + r.counts.fp)
                      : 0.0;
    r.recall = static_cast<double>(r.counts.tp) / static_cast<double>(r.counts.tp + r.counts.fn);
    r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

/// Brute-force top-k: sort peak list, intersect with truth.
template <class T>
double topk_reference(std::span<const T> probs, const std::vector<std::int64_t>& truth,
                      int min_separation) {
    std::set<std::int64_t> ts(truth.begin(), truth.end());
    auto peaks = peaks_reference(probs, 1e-12, min_separation);
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        return a.prob != b.prob ? a.prob > b.prob : a.pos < b.pos;
    });
    if (peaks.size() > ts.size()) peaks.resize(ts.size());
    std::int64_t hits = 0;
    for (const auto& p : peaks) hits += ts.count(p.pos) != 0;
    return static_cast<double>(hits) / static_cast<double>(ts.size());
}

}  // namespace circkit::oracle

namespace circkit::selftest {

struct Result {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Finite-difference checks over every differentiable op, run in double.
inline std::vector<Result> run_gradient_checks(std::uint64_t seed = 7) {
    using T = Tensor64;
    std::vector<Result> results;
    Rng rng(seed);
    auto randvec = [&](int n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        return v;
    };
    auto check = [&](const std::string& name, const std::function<T(const T&)>& fn, Shape shape,
                     double tol = 1e-6) {
        auto point = T::from_vector(randvec(static_cast<int>(shape_numel(shape))), shape);
        const double err = finite_diff_check<double>(fn, point, 1e-5);
        results.push_back({"gradient: " + name, err < tol, "max rel err " + std::to_string(err)});
    };

    check("sum(x^2)", [](const T& x) { return sum(mul(x, x)); }, {3, 4});
    check("mean(relu(x))", [](const T& x) { return mean(relu(x)); }, {5, 3});
    check("sigmoid/exp mix", [](const T& x) { return sum(mul(sigmoid(x), exp(scale(x, 0.5)))); }, {2, 6});
    check("matmul chain", [](const T& x) {
        auto w = T::from_vector({0.3, -0.2, 0.7, 0.1, -0.5, 0.4}, {3, 2});
        return sum(mul(matmul(x, w), matmul(x, w)));
    }, {4, 3});
    check("softmax rows", [](const T& x) {
        auto v = T::from_vector({1.0, -1.0, 0.5, 0.25, 2.0, -0.5, 0.1, 0.9}, {4, 2});
        return sum(mul(softmax_rows(x), transpose(v)));
    }, {2, 4});
    check("conv1d", [](const T& x) {
        auto xr = reshape(x, {1, 6, 2});
        auto w = T::from_vector({0.2, -0.1, 0.4, 0.3, 0.1, -0.2, -0.3, 0.5, 0.25, -0.15, 0.05, 0.35}, {3, 2, 2});
        auto b = T::from_vector({0.1, -0.1}, {2});
        return sum(mul(conv1d(xr, w, b, 2), conv1d(xr, w, b, 2)));
    }, {12});
    check("layer_norm", [](const T& x) {
        auto g = T::from_vector({1.1, 0.9, 1.2}, {3});
        auto o = T::from_vector({0.1, -0.2, 0.0}, {3});
        return sum(mul(layer_norm(x, g, o), layer_norm(x, g, o)));
    }, {4, 3}, 1e-5);
    check("global_avg_pool", [](const T& x) {
        auto xr = reshape(x, {2, 3, 2});
        return sum(mul(global_avg_pool(xr), global_avg_pool(xr)));
    }, {12});
    check("favor attention", [](const T& x) {
        auto map = RandomFeatureMapT<double>::gaussian(3, 8, 11);
        auto q = reshape(col_slice(x, 0, 3), {5, 3});
        auto k = reshape(col_slice(x, 3, 6), {5, 3});
        auto v = reshape(col_slice(x, 6, 9), {5, 3});
        return sum(mul(favor_plus_attention(q, k, v, map), favor_plus_attention(q, k, v, map)));
    }, {5, 9}, 1e-5);
    check("exact attention", [](const T& x) {
        auto q = reshape(col_slice(x, 0, 3), {5, 3});
        auto k = reshape(col_slice(x, 3, 6), {5, 3});
        auto v = reshape(col_slice(x, 6, 9), {5, 3});
        return sum(mul(exact_attention(q, k, v), exact_attention(q, k, v)));
    }, {5, 9}, 1e-5);
    check("weighted bce", [](const T& x) {
        return weighted_bce_with_logits(x, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0}, 7.0);
    }, {6});
    return results;
}

/// FAVOR+ approximation error against exact attention must shrink with m.
inline std::vector<Result> run_favor_error_suite(int trials = 20, int L = 64, int d = 8) {
    std::vector<Result> results;
    std::vector<int> ms{8, 64, 256};
    std::vector<double> medians;
    for (int m : ms) {
        std::vector<double> errs;
        for (int t = 0; t < trials; ++t) {
            Rng rng(Rng::mix(1234, static_cast<std::uint64_t>(m * 1000 + t)));
            auto rnd = [&](double s) {
                std::vector<double> v(static_cast<std::size_t>(L) * d);
                for (auto& x : v) x = rng.normal() * s;
                return Tensor64::from_vector(std::move(v), {L, d});
            };
            auto q = rnd(0.4), k = rnd(0.4), v = rnd(1.0);
            auto map = RandomFeatureMapT<double>::gaussian(d, m, Rng::mix(99, static_cast<std::uint64_t>(t)));
            auto approx = favor_plus_attention(q, k, v, map);
            auto exact = exact_attention(q, k, v);
            double num = 0, den = 0;
            for (std::size_t i = 0; i < approx.values().size(); ++i) {
                const double diff = approx.values()[i] - exact.values()[i];
                num += diff * diff;
                den += exact.values()[i] * exact.values()[i];
            }
            errs.push_back(std::sqrt(num / den));
        }
        std::sort(errs.begin(), errs.end());
        medians.push_back(errs[errs.size() / 2]);
    }
    const bool monotone = medians[0] >= medians[1] && medians[1] >= medians[2];
    results.push_back({"favor error monotone in m",
                       monotone,
                       "medians " + std::to_string(medians[0]) + " / " + std::to_string(medians[1]) + " / " +
                           std::to_string(medians[2])});
    results.push_back({"favor error small at m=256", medians[2] < 0.2,
                       "median " + std::to_string(medians[2])});
    return results;
}

/// Metrics vs. plain recounts on random small tracks.
inline std::vector<Result> run_metric_oracle_suite(int instances = 300, std::uint64_t seed = 5) {
    std::vector<Result> results;
    Rng rng(seed);
    int prf_bad = 0, topk_bad = 0, peaks_bad = 0, bal_bad = 0, consistency_bad = 0, consistency_checked = 0;
    for (int t = 0; t < instances; ++t) {
        const int n = 5 + static_cast<int>(rng.uniform_int(30));
        std::vector<double> probs(static_cast<std::size_t>(n));
        for (auto& p : probs) p = rng.uniform_int(10) < 3 ? rng.uniform() : std::floor(rng.uniform() * 8) / 8.0;
        std::vector<std::int64_t> truth;
        for (int i = 0; i < n; ++i)
            if (rng.uniform_int(5) == 0) truth.push_back(i);
        if (truth.empty()) truth.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n))));
        const int min_sep = 1 + static_cast<int>(rng.uniform_int(3));
        const double tau = rng.uniform();

        auto a = position_prf(std::span<const double>(probs), truth, tau);
        auto b = oracle::prf_reference(std::span<const double>(probs), truth, tau);
        if (a.counts.tp != b.counts.tp || a.counts.fp != b.counts.fp || a.counts.fn != b.counts.fn ||
            a.counts.tn != b.counts.tn || a.precision != b.precision || a.recall != b.recall || a.f1 != b.f1)
            ++prf_bad;

        if (top_k_accuracy(std::span<const double>(probs), truth, min_sep) !=
            oracle::topk_reference(std::span<const double>(probs), truth, min_sep))
            ++topk_bad;

        const auto p1 = detect_peaks(std::span<const double>(probs), 0.3, min_sep);
        const auto p2 = oracle::peaks_reference(std::span<const double>(probs), 0.3, min_sep);
        if (p1.size() != p2.size() ||
            !std::equal(p1.begin(), p1.end(), p2.begin(),
                        [](const Peak& x, const Peak& y) { return x.pos == y.pos && x.prob == y.prob; }))
            ++peaks_bad;

        MetricCounts c;
        c.tp = static_cast<std::int64_t>(rng.uniform_int(20)) + 1;
        c.fn = static_cast<std::int64_t>(rng.uniform_int(20));
        c.tn = static_cast<std::int64_t>(rng.uniform_int(20)) + 1;
        c.fp = static_cast<std::int64_t>(rng.uniform_int(20));
        const double expect = 0.5 * (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) +
                                     static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp));
        if (balanced_accuracy(c) != expect) ++bal_bad;

        const auto consistent = pr_equality_consistency(std::span<const double>(probs), truth, min_sep);
        if (consistent.has_value()) {
            ++consistency_checked;
            if (!*consistent) ++consistency_bad;
        }
    }
    results.push_back({"position_prf matches recount", prf_bad == 0, std::to_string(prf_bad) + " mismatches"});
    results.push_back({"top_k_accuracy matches recount", topk_bad == 0, std::to_string(topk_bad) + " mismatches"});
    results.push_back({"detect_peaks matches enumeration", peaks_bad == 0, std::to_string(peaks_bad) + " mismatches"});
    results.push_back({"balanced_accuracy matches formula", bal_bad == 0, std::to_string(bal_bad) + " mismatches"});
    results.push_back({"precision=recall=top-k where applicable", consistency_bad == 0,
                       std::to_string(consistency_checked) + " applicable instances"});
    return results;
}

inline std::vector<Result> run_all() {
    std::vector<Result> all;
    for (auto&& r : run_gradient_checks()) all.push_back(std::move(r));
    for (auto&& r : run_favor_error_suite()) all.push_back(std::move(r));
    for (auto&& r : run_metric_oracle_suite()) all.push_back(std::move(r));
    return all;
}

}  // namespace circkit::selftest
