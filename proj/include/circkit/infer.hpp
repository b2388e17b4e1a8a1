#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "circkit/dataset.hpp"
#include "circkit/genome.hpp"
#include "circkit/model.hpp"

namespace circkit {

/// Per-position splice-site probabilities over one chromosome, with the
/// number of overlapping windows that contributed to each position.
struct PredictionTrack {
    std::string chrom;
    std::vector<float> probs;
    std::vector<int> coverage;
};

struct SlidingConfig {
    int window = 5001;
    int stride = 0;  // 0: default W - ceil(W/3), i.e. consecutive windows overlap by one third
    int workers = 1;
};

inline int default_stride(int window) {
    const int overlap = (window + 2) / 3;  // ceil(W/3)
    return std::max(1, window - overlap);
}

/// Window start offsets covering [0, len): multiples of the stride plus a
/// final right-aligned window so the tail is fully covered. Sequences shorter
/// than one window get a single window starting at 0 (N-padded on the right).
inline std::vector<std::int64_t> window_starts(std::int64_t len, int window, int stride) {
    std::vector<std::int64_t> starts;
    if (len <= window) {
        starts.push_back(0);
        return starts;
    }
    for (std::int64_t s = 0; s + window <= len; s += stride) starts.push_back(s);
    if (starts.back() + window < len) starts.push_back(len - window);
    return starts;
}

/// Scans a chromosome with overlapping windows and averages the per-position
/// sigmoid probabilities of every covering window. Window scores may be
/// computed by several workers; the merge accumulates in fixed window order,
/// so results do not depend on scheduling.
template <class S>
PredictionTrack sliding_window_predict(ModelT<S>& model, const GenomeRecord& chrom,
                                       const std::string& species, const SlidingConfig& cfg = {}) {
    model.species_index(species);  // validates up front
    const int W = cfg.window;
    if (W < 1 || W % 2 == 0) throw std::invalid_argument("sliding_window_predict: window must be odd");
    const int stride = cfg.stride > 0 ? cfg.stride : default_stride(W);
    const auto len = static_cast<std::int64_t>(chrom.sequence.size());
    const auto starts = window_starts(len, W, stride);

    std::vector<std::vector<double>> window_probs(starts.size());
    const std::array<std::string, 1> species_arr{species};
    auto score_window = [&](std::size_t wi) {
        const std::int64_t s = starts[wi];
        std::string win(static_cast<std::size_t>(W), 'N');
        for (int i = 0; i < W; ++i) {
            const std::int64_t p = s + i;
            if (p >= 0 && p < len) win[static_cast<std::size_t>(i)] = chrom.sequence[static_cast<std::size_t>(p)];
        }
        auto x = one_hot_encode<S>(win, model.config().alphabet());
        auto batch = reshape(x, {1, W, model.config().channels()});
        auto logits = model.forward_ssd(batch, std::span<const std::string>(species_arr));
        auto& out = window_probs[wi];
        out.resize(static_cast<std::size_t>(W));
        for (int i = 0; i < W; ++i) out[static_cast<std::size_t>(i)] = sigmoid_value(logits.at(0, i));
    };

    if (cfg.workers > 1) {
        std::vector<std::thread> threads;
        const int n = std::max(1, cfg.workers);
        for (int t = 0; t < n; ++t)
            threads.emplace_back([&, t] {
                for (std::size_t wi = static_cast<std::size_t>(t); wi < starts.size();
                     wi += static_cast<std::size_t>(n))
                    score_window(wi);
            });
        for (auto& th : threads) th.join();
    } else {
        for (std::size_t wi = 0; wi < starts.size(); ++wi) score_window(wi);
    }

    PredictionTrack track;
    track.chrom = chrom.id;
    std::vector<double> acc(static_cast<std::size_t>(len), 0.0);
    track.coverage.assign(static_cast<std::size_t>(len), 0);
    for (std::size_t wi = 0; wi < starts.size(); ++wi) {
        const std::int64_t s = starts[wi];
        for (int i = 0; i < W; ++i) {
            const std::int64_t p = s + i;
            if (p < 0 || p >= len) continue;
            acc[static_cast<std::size_t>(p)] += window_probs[wi][static_cast<std::size_t>(i)];
            ++track.coverage[static_cast<std::size_t>(p)];
        }
    }
    track.probs.resize(static_cast<std::size_t>(len));
    for (std::int64_t p = 0; p < len; ++p) {
        const int c = track.coverage[static_cast<std::size_t>(p)];
        track.probs[static_cast<std::size_t>(p)] =
            c > 0 ? static_cast<float>(acc[static_cast<std::size_t>(p)] / c) : 0.0f;
    }
    return track;
}

struct Peak {
    std::int64_t pos = 0;
    double prob = 0;
};

/// Local maxima above `threshold`, plateaus reported at their leftmost index,
/// then greedy suppression within `min_separation` by descending probability
/// (ties broken toward the lower index). Output is sorted by position.
template <class T>
std::vector<Peak> detect_peaks(std::span<const T> probs, double threshold = 0.5, int min_separation = 1) {
    if (min_separation < 1) throw std::invalid_argument("detect_peaks: min_separation must be >= 1");
    const auto n = static_cast<std::int64_t>(probs.size());
    std::vector<Peak> candidates;
    std::int64_t i = 0;
    while (i < n) {
        std::int64_t j = i;
        while (j + 1 < n && probs[static_cast<std::size_t>(j + 1)] == probs[static_cast<std::size_t>(i)]) ++j;
        const double v = static_cast<double>(probs[static_cast<std::size_t>(i)]);
        const bool rises = i == 0 || static_cast<double>(probs[static_cast<std::size_t>(i - 1)]) < v;
        const bool falls = j == n - 1 || static_cast<double>(probs[static_cast<std::size_t>(j + 1)]) < v;
        if (rises && falls && v > threshold) candidates.push_back({i, v});
        i = j + 1;
    }
    std::sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) {
        return a.prob != b.prob ? a.prob > b.prob : a.pos < b.pos;
    });
    std::vector<Peak> accepted;
    for (const auto& c : candidates) {
        bool blocked = false;
        for (const auto& a : accepted)
            if (std::llabs(a.pos - c.pos) < min_separation) {
                blocked = true;
                break;
            }
        if (!blocked) accepted.push_back(c);
    }
    std::sort(accepted.begin(), accepted.end(), [](const Peak& a, const Peak& b) { return a.pos < b.pos; });
    return accepted;
}

/// The k highest-probability peaks, ties toward the lower position; returns
/// all peaks when fewer than k exist.
inline std::vector<Peak> top_k_select(std::vector<Peak> peaks, std::int64_t k) {
    if (k < 0) throw std::invalid_argument("top_k_select: k must be >= 0");
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        return a.prob != b.prob ? a.prob > b.prob : a.pos < b.pos;
    });
    if (static_cast<std::int64_t>(peaks.size()) > k) peaks.resize(static_cast<std::size_t>(k));
    return peaks;
}

/// All ordered site pairs with 0 < site_b - site_a <= max_span.
inline std::vector<std::pair<std::int64_t, std::int64_t>> pair_candidates(
    const std::vector<std::int64_t>& sorted_sites, std::int64_t max_span = 100000) {
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    for (std::size_t i = 0; i < sorted_sites.size(); ++i)
        for (std::size_t j = i + 1; j < sorted_sites.size(); ++j) {
            const auto span = sorted_sites[j] - sorted_sites[i];
            if (span <= 0) continue;
            if (span > max_span) break;
            pairs.emplace_back(sorted_sites[i], sorted_sites[j]);
        }
    return pairs;
}

/// A scored candidate circRNA: a site pair with its pairing probability and
/// the two detection peak probabilities.
struct CircRnaCall {
    std::string chrom;
    std::int64_t site_a = 0;
    std::int64_t site_b = 0;
    double pair_score = 0;
    double score_a = 0;
    double score_b = 0;
};

struct CallConfig {
    SlidingConfig sliding;
    double peak_threshold = 0.5;
    int min_separation = 1;
    std::int64_t max_span = 100000;
    double pair_threshold = 0.5;
    int context = 1001;
    int batch_size = 16;  // pairing sequences scored per forward pass
};

/// End-to-end calling on one genome: detection track, peaks, candidate pairs,
/// pairing scores. Pairing sequences are constructed exactly as the dataset
/// builder constructs them.
template <class S>
std::vector<CircRnaCall> call_circrnas(ModelT<S>& ssd_model, ModelT<S>& ssp_model, const Genome& genome,
                                       const std::string& species, const CallConfig& cfg = {}) {
    if (ssd_model.config().task != Task::ssd)
        throw std::invalid_argument("call_circrnas: detection checkpoint is not a detection model");
    if (ssp_model.config().task != Task::ssp)
        throw std::invalid_argument("call_circrnas: pairing checkpoint is not a pairing model");
    ssd_model.species_index(species);
    ssp_model.species_index(species);

    std::vector<CircRnaCall> calls;
    for (const auto& chrom : genome.records) {
        const auto track = sliding_window_predict(ssd_model, chrom, species, cfg.sliding);
        const auto peaks =
            detect_peaks(std::span<const float>(track.probs), cfg.peak_threshold, cfg.min_separation);
        std::vector<std::int64_t> sites;
        std::vector<double> site_scores;
        for (const auto& p : peaks) {
            sites.push_back(p.pos);
            site_scores.push_back(p.prob);
        }
        const auto pairs = pair_candidates(sites, cfg.max_span);

        for (std::size_t base = 0; base < pairs.size(); base += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min(pairs.size() - base, static_cast<std::size_t>(cfg.batch_size));
            std::vector<TensorT<S>> rows;
            std::vector<std::string> sp(count, species);
            for (std::size_t i = 0; i < count; ++i) {
                const auto& [a, b] = pairs[base + i];
                const std::string seq = make_pair_sequence(genome, chrom.id, a, chrom.id, b, cfg.context);
                rows.push_back(one_hot_encode<S>(seq, kSspAlphabet));
            }
            auto x = stack(rows);  // [count x L x 6]
            auto logits = ssp_model.forward_ssp(x, std::span<const std::string>(sp));
            for (std::size_t i = 0; i < count; ++i) {
                const double score = sigmoid_value(logits.at(static_cast<int>(i)));
                if (score > cfg.pair_threshold) {
                    const auto& [a, b] = pairs[base + i];
                    const auto ia = std::lower_bound(sites.begin(), sites.end(), a) - sites.begin();
                    const auto ib = std::lower_bound(sites.begin(), sites.end(), b) - sites.begin();
                    calls.push_back({chrom.id, a, b, score, site_scores[static_cast<std::size_t>(ia)],
                                     site_scores[static_cast<std::size_t>(ib)]});
                }
            }
        }
    }
    std::sort(calls.begin(), calls.end(), [](const CircRnaCall& a, const CircRnaCall& b) {
        return std::tie(a.chrom, a.site_a, a.site_b) < std::tie(b.chrom, b.site_a, b.site_b);
    });
    return calls;
}

// ---------------------------------------------------------------------------
// Track and call serialization

inline void write_track_tsv(std::ostream& out, const PredictionTrack& track) {
    out << "# chrom\tpos\tprob\n";
    for (std::size_t i = 0; i < track.probs.size(); ++i)
        out << track.chrom << '\t' << i << '\t' << track.probs[i] << '\n';
}

/// Compact binary track: magic "CFTK", u32 version, u32 name length, name,
/// u64 position count, raw little-endian f32 probabilities.
inline void write_track_binary(std::ostream& out, const PredictionTrack& track) {
    out.write("CFTK", 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const auto name_len = static_cast<std::uint32_t>(track.chrom.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(track.chrom.data(), static_cast<std::streamsize>(track.chrom.size()));
    const auto count = static_cast<std::uint64_t>(track.probs.size());
    out.write(reinterpret_cast<const char*>(&count), 8);
    out.write(reinterpret_cast<const char*>(track.probs.data()),
              static_cast<std::streamsize>(track.probs.size() * sizeof(float)));
}

inline PredictionTrack read_track_binary(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CFTK", 4) != 0)
        throw std::runtime_error("read_track_binary: bad magic (not a track file)");
    std::uint32_t version = 0, name_len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("read_track_binary: unsupported version");
    in.read(reinterpret_cast<char*>(&name_len), 4);
    PredictionTrack track;
    track.chrom.resize(name_len);
    in.read(track.chrom.data(), name_len);
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    track.probs.resize(count);
    in.read(reinterpret_cast<char*>(track.probs.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error("read_track_binary: truncated file");
    return track;
}

/// BED-like call table: chrom, site_a, site_b, pair_score, score_a, score_b.
inline void write_calls_tsv(std::ostream& out, const std::vector<CircRnaCall>& calls) {
    out << "# chrom\tsite_a\tsite_b\tpair_score\tscore_a\tscore_b\n";
    for (const auto& c : calls)
        out << c.chrom << '\t' << c.site_a << '\t' << c.site_b << '\t' << c.pair_score << '\t' << c.score_a
            << '\t' << c.score_b << '\n';
}

}  // namespace circkit
