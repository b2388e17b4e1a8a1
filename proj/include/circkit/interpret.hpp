#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circkit/common.hpp"
#include "circkit/dataset.hpp"
#include "circkit/model.hpp"

namespace circkit {

/// Channel-summed absolute input gradient of a scalar graph output:
/// S_i = sum_j |d y / d x[i,j]|. The input leaf must have been flagged
/// requires_grad before the graph was built.
template <class S>
std::vector<S> saliency_from_graph(TensorT<S>& x, TensorT<S>& y) {
    if (!x.requires_grad())
        throw std::invalid_argument("saliency_from_graph: input was not flagged for gradients");
    y.backward();
    const int L = x.dim(0), C = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(L), S(0));
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < C; ++j)
            out[static_cast<std::size_t>(i)] += std::abs(x.grads()[static_cast<std::size_t>(i) * C + j]);
    return out;
}

struct SaliencyTarget {
    enum Kind { ssd_position, ssp_score } kind = ssd_position;
    int position = -1;  // -1: the window center

    static SaliencyTarget ssd_center() { return {ssd_position, -1}; }
    static SaliencyTarget ssd_at(int pos) { return {ssd_position, pos}; }
    static SaliencyTarget ssp() { return {ssp_score, -1}; }
};

/// Position-importance scores for one window: gradient of the chosen logit
/// (detection logit at a position, or the pooled pairing logit) with respect
/// to the one-hot input, channel-summed absolute values.
template <class S>
std::vector<S> saliency_map(ModelT<S>& model, const std::string& window, const std::string& species,
                            SaliencyTarget target = SaliencyTarget::ssd_center()) {
    const int L = static_cast<int>(window.size());
    auto x = one_hot_encode<S>(window, model.config().alphabet());
    x.set_requires_grad();
    auto batch = reshape(x, {1, L, model.config().channels()});
    const std::array<std::string, 1> sp{species};
    TensorT<S> y;
    if (target.kind == SaliencyTarget::ssd_position) {
        auto logits = model.forward_ssd(batch, std::span<const std::string>(sp));  // [1 x L]
        const int pos = target.position < 0 ? L / 2 : target.position;
        if (pos < 0 || pos >= L) throw std::out_of_range("saliency_map: target position outside window");
        y = element(logits, pos);
    } else {
        auto logits = model.forward_ssp(batch, std::span<const std::string>(sp));  // [1]
        y = element(logits, 0);
    }
    return saliency_from_graph(x, y);
}

/// Species-averaged saliency profile.
struct SaliencyProfile {
    std::vector<double> values;
    int center_index = 0;
    std::string species;
    int n_sequences = 0;
};

/// Elementwise arithmetic mean of equally long maps.
template <class S>
std::vector<double> average_saliency(const std::vector<std::vector<S>>& maps) {
    if (maps.empty()) throw std::invalid_argument("average_saliency: empty map list");
    const std::size_t len = maps[0].size();
    for (const auto& m : maps)
        if (m.size() != len) throw std::invalid_argument("average_saliency: maps have unequal lengths");
    std::vector<double> mean(len, 0.0);
    for (const auto& m : maps)
        for (std::size_t i = 0; i < len; ++i) mean[i] += static_cast<double>(m[i]);
    for (auto& v : mean) v /= static_cast<double>(maps.size());
    return mean;
}

/// Saliency-weighted base importance around the window center. At each
/// position the four base weights are normalized to sum to 1; positions whose
/// total saliency is zero keep an all-zero row. 'N' bases contribute nothing.
struct LogoMatrix {
    int radius = 50;
    std::vector<std::array<double, 4>> weights;  // length 2*radius+1, order A,C,G,T
};

template <class S>
LogoMatrix saliency_logo(std::span<const std::string> sequences,
                         std::span<const std::vector<S>> maps, int radius = 50) {
    if (sequences.size() != maps.size())
        throw std::invalid_argument("saliency_logo: sequence/map count mismatch");
    if (sequences.empty()) throw std::invalid_argument("saliency_logo: empty input");
    LogoMatrix logo;
    logo.radius = radius;
    logo.weights.assign(static_cast<std::size_t>(2 * radius + 1), {0, 0, 0, 0});
    for (std::size_t k = 0; k < sequences.size(); ++k) {
        const auto& seq = sequences[k];
        const auto& map = maps[k];
        if (seq.size() != map.size())
            throw std::invalid_argument("saliency_logo: sequence " + std::to_string(k) +
                                        " not aligned with its map");
        const int center = static_cast<int>(seq.size()) / 2;
        if (center - radius < 0 || center + radius >= static_cast<int>(seq.size()))
            throw std::invalid_argument("saliency_logo: window shorter than logo span");
        for (int off = -radius; off <= radius; ++off) {
            const int idx = center + off;
            int base;
            switch (seq[static_cast<std::size_t>(idx)]) {
                case 'A': base = 0; break;
                case 'C': base = 1; break;
                case 'G': base = 2; break;
                case 'T': base = 3; break;
                default: continue;  // N
            }
            logo.weights[static_cast<std::size_t>(off + radius)][static_cast<std::size_t>(base)] +=
                static_cast<double>(map[static_cast<std::size_t>(idx)]);
        }
    }
    for (auto& row : logo.weights) {
        const double total = row[0] + row[1] + row[2] + row[3];
        if (total > 0)
            for (auto& w : row) w /= total;
    }
    return logo;
}

// ---------------------------------------------------------------------------
// PolyA/T scanning

/// True iff the window contains a run of >= min_run consecutive 'A' or a run
/// of >= min_run consecutive 'T'.
inline bool has_polyat_run(std::string_view window, int min_run) {
    if (min_run < 1) throw std::invalid_argument("has_polyat_run: min_run must be >= 1");
    int run_a = 0, run_t = 0;
    for (char c : window) {
        run_a = c == 'A' ? run_a + 1 : 0;
        run_t = c == 'T' ? run_t + 1 : 0;
        if (run_a >= min_run || run_t >= min_run) return true;
    }
    return false;
}

/// Scans the +-window/2 neighborhood of a splice site (inclusive of the site;
/// a nominal 100-base window covers 101 bases). The window is clipped at
/// sequence boundaries.
inline bool polyat_scan(const std::string& sequence, std::int64_t site, int window = 100, int min_run = 5) {
    const auto len = static_cast<std::int64_t>(sequence.size());
    if (site < 0 || site >= len) throw std::out_of_range("polyat_scan: site outside sequence");
    const std::int64_t lo = std::max<std::int64_t>(0, site - window / 2);
    const std::int64_t hi = std::min<std::int64_t>(len - 1, site + window / 2);
    return has_polyat_run(std::string_view(sequence).substr(static_cast<std::size_t>(lo),
                                                            static_cast<std::size_t>(hi - lo + 1)),
                          min_run);
}

/// Monte Carlo estimate of the chance that a uniform random A/C/G/T string of
/// n_bases contains a polyA or polyT run of >= min_run.
inline double polyat_random_baseline(int n_bases, int min_run, std::int64_t trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("polyat_random_baseline: trials must be >= 1");
    static constexpr char kBases[] = {'A', 'C', 'G', 'T'};
    Rng rng(Rng::mix(seed, 0xBA5Eull));
    std::string window(static_cast<std::size_t>(n_bases), 'N');
    std::int64_t hits = 0;
    for (std::int64_t t = 0; t < trials; ++t) {
        for (auto& c : window) c = kBases[rng.uniform_int(4)];
        if (has_polyat_run(window, min_run)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(trials);
}

/// Exact probability of the same event by dynamic programming over run-length
/// states (trailing-run base and length, absorbing once a run reaches min_run).
inline double exact_polyat_probability(int n_bases, int min_run) {
    if (min_run < 1) throw std::invalid_argument("exact_polyat_probability: min_run must be >= 1");
    if (n_bases < 0) throw std::invalid_argument("exact_polyat_probability: negative window");
    // States: 0 = trailing run is neither A nor T; 1..r-1 = trailing A run;
    // r..2r-2 = trailing T run. Mass that completes a run leaves the vector.
    const int r = min_run;
    std::vector<double> state(static_cast<std::size_t>(2 * r - 1), 0.0);
    state[0] = 1.0;
    for (int step = 0; step < n_bases; ++step) {
        std::vector<double> next(state.size(), 0.0);
        auto a_index = [&](int len) { return static_cast<std::size_t>(len); };
        auto t_index = [&](int len) { return static_cast<std::size_t>(r - 1 + len); };
        for (std::size_t s = 0; s < state.size(); ++s) {
            const double p = state[s];
            if (p == 0) continue;
            const bool is_a = s >= 1 && s <= static_cast<std::size_t>(r - 1);
            const bool is_t = s >= static_cast<std::size_t>(r);
            const int len = is_a ? static_cast<int>(s) : is_t ? static_cast<int>(s) - (r - 1) : 0;
            // next base A
            {
                const int new_len = is_a ? len + 1 : 1;
                if (new_len < r) next[a_index(new_len)] += p * 0.25;
            }
            // next base T
            {
                const int new_len = is_t ? len + 1 : 1;
                if (new_len < r) next[t_index(new_len)] += p * 0.25;
            }
            // next base C or G
            next[0] += p * 0.5;
        }
        state.swap(next);
    }
    double survive = 0;
    for (double p : state) survive += p;
    return 1.0 - survive;
}

// ---------------------------------------------------------------------------
// Output formats

/// Profile TSV: offset from the site and averaged importance.
inline void write_profile_tsv(std::ostream& out, const SaliencyProfile& profile) {
    out << "# species: " << profile.species << "\n# sequences_averaged: " << profile.n_sequences << '\n';
    out << "offset\tsaliency\n";
    for (std::size_t i = 0; i < profile.values.size(); ++i)
        out << (static_cast<std::int64_t>(i) - profile.center_index) << '\t' << profile.values[i] << '\n';
}

/// Logo TSV: position offset and the four normalized base weights.
inline void write_logo_tsv(std::ostream& out, const LogoMatrix& logo) {
    out << "position\twA\twC\twG\twT\n";
    for (std::size_t i = 0; i < logo.weights.size(); ++i) {
        out << (static_cast<int>(i) - logo.radius);
        for (double w : logo.weights[i]) out << '\t' << w;
        out << '\n';
    }
}

/// Minimal stacked-letter SVG rendering of a logo matrix.
inline void render_logo_svg(std::ostream& out, const LogoMatrix& logo) {
    const int cols = static_cast<int>(logo.weights.size());
    const double col_w = 12, height = 120, pad = 20;
    static constexpr const char* kColors[4] = {"#2ca02c", "#1f77b4", "#ff7f0e", "#d62728"};
    static constexpr const char* kLetters[4] = {"A", "C", "G", "T"};
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * col_w + 2 * pad
        << "\" height=\"" << height + 2 * pad << "\">\n";
    for (int c = 0; c < cols; ++c) {
        double y = pad + height;
        // tallest letters on top: draw in ascending weight order from the baseline
        std::array<int, 4> order{0, 1, 2, 3};
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return logo.weights[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)] <
                   logo.weights[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
        });
        for (int b : order) {
            const double w = logo.weights[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
            if (w <= 0) continue;
            const double h = w * height;
            y -= h;
            out << "  <text x=\"" << pad + c * col_w << "\" y=\"" << y + h
                << "\" fill=\"" << kColors[b] << "\" font-family=\"monospace\" font-size=\"" << h * 1.32
                << "\" textLength=\"" << col_w << "\" lengthAdjust=\"spacingAndGlyphs\">" << kLetters[b]
                << "</text>\n";
        }
    }
    out << "</svg>\n";
}

}  // namespace circkit
