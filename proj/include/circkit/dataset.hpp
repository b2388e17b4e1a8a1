#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "circkit/common.hpp"
#include "circkit/genome.hpp"
#include "circkit/tensor.hpp"

namespace circkit {

inline constexpr const char* kSsdAlphabet = "ACGTN";
inline constexpr const char* kSspAlphabet = "ACGTNM";
inline constexpr const char* kSpacer = "MMMMM";

/// One detection instance: a fixed-length window with the in-window offsets
/// of every annotated splice site (empty for negative windows).
struct SsdSample {
    std::string species;
    std::string window;
    std::vector<int> label_positions;  // sorted, in [0, window size)
};

/// One pairing instance: context(site_a) + "MMMMM" + context(site_b).
struct SspSample {
    std::string species;
    std::string sequence;
    int label = 0;
};

struct SpeciesCounts {
    std::int64_t positives = 0;
    std::int64_t negatives = 0;
    std::int64_t total() const { return positives + negatives; }
};

struct DatasetManifest {
    std::string task;  // "ssd" | "ssp"
    std::map<std::string, SpeciesCounts> per_species;
    double ratio = 0;        // SSD: N/P position ratio; SSP: negative/positive sample ratio
    int window = 0;          // SSD window length W (0 for SSP)
    int context = 0;         // SSP context length C (0 for SSD)
    double neg_per_pos = 0;  // configured negative policy
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    std::int64_t total_samples() const {
        std::int64_t n = 0;
        for (const auto& [sp, c] : per_species) n += c.total();
        return n;
    }
};

/// One-hot encodes a sequence over an ordered alphabet: row i carries a single
/// 1.0 at the channel of character i.
template <class S>
TensorT<S> one_hot_encode(std::string_view sequence, std::string_view alphabet) {
    const int L = static_cast<int>(sequence.size());
    const int C = static_cast<int>(alphabet.size());
    auto t = TensorT<S>::zeros({L, C});
    for (int i = 0; i < L; ++i) {
        const auto pos = alphabet.find(sequence[static_cast<std::size_t>(i)]);
        if (pos == std::string_view::npos)
            throw std::invalid_argument("one_hot_encode: character '" +
                                        std::string(1, sequence[static_cast<std::size_t>(i)]) +
                                        "' at position " + std::to_string(i) + " not in alphabet");
        t.at(i, static_cast<int>(pos)) = S(1);
    }
    return t;
}

/// N/P ratio over all positions of an SSD sample set:
/// (total positions - positive positions) / positive positions.
inline double np_ratio(const std::vector<SsdSample>& samples) {
    std::int64_t total = 0, pos = 0;
    for (const auto& s : samples) {
        total += static_cast<std::int64_t>(s.window.size());
        pos += static_cast<std::int64_t>(s.label_positions.size());
    }
    if (pos == 0) throw std::runtime_error("np_ratio: no positive label positions in sample set");
    return static_cast<double>(total - pos) / static_cast<double>(pos);
}

struct SsdBuildConfig {
    int window = 5001;
    double neg_per_pos_window = 0.5;
    std::uint64_t seed = 0;
    std::vector<std::string> species;  // empty = every species present in the annotations
};

struct SsdDataset {
    std::vector<SsdSample> samples;
    DatasetManifest manifest;
};

namespace detail {

inline std::vector<std::string> resolve_species(const std::vector<CircRnaAnnotation>& anns,
                                                const std::vector<std::string>& requested) {
    std::set<std::string> present;
    for (const auto& a : anns) present.insert(a.species);
    if (requested.empty()) return {present.begin(), present.end()};
    for (const auto& s : requested)
        if (!present.count(s))
            throw std::runtime_error("no annotations for requested species '" + s + "'");
    return requested;
}

inline bool window_hits_site(const std::vector<std::int64_t>& sorted_sites, std::int64_t lo,
                             std::int64_t hi) {
    const auto it = std::lower_bound(sorted_sites.begin(), sorted_sites.end(), lo);
    return it != sorted_sites.end() && *it <= hi;
}

}  // namespace detail

/// Builds the detection dataset: one window per distinct annotated site
/// (labels list every site that falls inside the window), plus
/// ceil(neg_per_pos_window * positives) windows drawn from site-free regions.
inline SsdDataset build_ssd_dataset(const Genome& genome, const std::vector<CircRnaAnnotation>& anns,
                                    const SsdBuildConfig& cfg = {}) {
    if (cfg.window < 1 || cfg.window % 2 == 0)
        throw std::invalid_argument("build_ssd_dataset: window length must be odd and positive");
    const std::int64_t radius = (cfg.window - 1) / 2;
    const auto species_list = detail::resolve_species(anns, cfg.species);
    const auto sites_by_key = collect_sites(anns);

    SsdDataset out;
    out.manifest.task = "ssd";
    out.manifest.window = cfg.window;
    out.manifest.neg_per_pos = cfg.neg_per_pos_window;
    out.manifest.seed = cfg.seed;

    for (const auto& species : species_list) {
        std::vector<std::pair<std::string, const std::vector<std::int64_t>*>> chroms;
        for (const auto& [key, sites] : sites_by_key)
            if (key.first == species) chroms.emplace_back(key.second, &sites);

        auto& counts = out.manifest.per_species[species];

        // Positive windows, one per distinct site.
        for (const auto& [chrom, sites] : chroms) {
            const auto& rec = genome.find(chrom);
            for (std::int64_t site : *sites) {
                SsdSample s;
                s.species = species;
                s.window = extract_window(rec, site, radius);
                const std::int64_t lo = site - radius, hi = site + radius;
                for (std::int64_t other : *sites)
                    if (other >= lo && other <= hi)
                        s.label_positions.push_back(static_cast<int>(other - lo));
                out.samples.push_back(std::move(s));
                ++counts.positives;
            }
        }

        // Negative windows from regions whose span contains no annotated site.
        const auto target = static_cast<std::int64_t>(
            std::ceil(cfg.neg_per_pos_window * static_cast<double>(counts.positives)));
        if (target == 0) continue;
        std::int64_t genome_span = 0;
        for (const auto& [chrom, sites] : chroms)
            genome_span += static_cast<std::int64_t>(genome.find(chrom).sequence.size());

        Rng rng(Rng::mix(cfg.seed, fnv1a(species)));
        std::int64_t drawn = 0;
        const std::int64_t max_attempts = 200 * target + 1000;
        for (std::int64_t attempt = 0; attempt < max_attempts && drawn < target; ++attempt) {
            std::int64_t flat = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(genome_span)));
            const GenomeRecord* rec = nullptr;
            const std::vector<std::int64_t>* sites = nullptr;
            for (const auto& [chrom, s] : chroms) {
                const auto len = static_cast<std::int64_t>(genome.find(chrom).sequence.size());
                if (flat < len) {
                    rec = &genome.find(chrom);
                    sites = s;
                    break;
                }
                flat -= len;
            }
            const std::int64_t center = flat;
            if (detail::window_hits_site(*sites, center - radius, center + radius)) continue;
            SsdSample s;
            s.species = species;
            s.window = extract_window(*rec, center, radius);
            out.samples.push_back(std::move(s));
            ++drawn;
        }
        counts.negatives = drawn;
        if (drawn < target)
            out.manifest.warnings.push_back("species " + species + ": only " + std::to_string(drawn) +
                                            " of " + std::to_string(target) +
                                            " negative windows could be placed (genome too dense or short)");
    }

    out.manifest.ratio = np_ratio(out.samples);
    return out;
}

struct SspBuildConfig {
    int context = 1001;
    double neg_ratio = 10.0;
    std::uint64_t seed = 0;
    std::vector<std::string> species;
};

struct SspDataset {
    std::vector<SspSample> samples;
    DatasetManifest manifest;
};

/// Canonical pairing-sequence construction shared by the dataset builder and
/// the genome-scale caller: context(lower site) + "MMMMM" + context(higher site),
/// cross-chromosome order resolved by (chrom, pos).
inline std::string make_pair_sequence(const Genome& genome, const std::string& chrom_a, std::int64_t a,
                                      const std::string& chrom_b, std::int64_t b, int context) {
    if (context < 1 || context % 2 == 0)
        throw std::invalid_argument("make_pair_sequence: context length must be odd and positive");
    const std::int64_t radius = (context - 1) / 2;
    auto first = std::make_pair(chrom_a, a), second = std::make_pair(chrom_b, b);
    if (second < first) std::swap(first, second);
    return extract_window(genome.find(first.first), first.second, radius) + kSpacer +
           extract_window(genome.find(second.first), second.second, radius);
}

/// Builds the pairing dataset. Positives concatenate the two annotated site
/// contexts of each circRNA; negatives pair sites drawn from two different
/// circRNAs of the same species and never duplicate a positive pair.
inline SspDataset build_ssp_dataset(const Genome& genome, const std::vector<CircRnaAnnotation>& anns,
                                    const SspBuildConfig& cfg = {}) {
    if (cfg.context < 1 || cfg.context % 2 == 0)
        throw std::invalid_argument("build_ssp_dataset: context length must be odd and positive");
    if (!(cfg.neg_ratio > 0)) throw std::invalid_argument("build_ssp_dataset: neg_ratio must be positive");
    const auto species_list = detail::resolve_species(anns, cfg.species);

    SspDataset out;
    out.manifest.task = "ssp";
    out.manifest.context = cfg.context;
    out.manifest.neg_per_pos = cfg.neg_ratio;
    out.manifest.seed = cfg.seed;

    for (const auto& species : species_list) {
        std::vector<const CircRnaAnnotation*> circs;
        for (const auto& a : anns)
            if (a.species == species) circs.push_back(&a);
        std::sort(circs.begin(), circs.end(), [](const auto* x, const auto* y) {
            return std::tie(x->chrom, x->site_a, x->site_b) < std::tie(y->chrom, y->site_a, y->site_b);
        });
        if (circs.size() < 2)
            throw std::runtime_error("build_ssp_dataset: species '" + species +
                                     "' has fewer than 2 circRNAs; cannot build negative pairs");

        auto& counts = out.manifest.per_species[species];
        std::set<std::tuple<std::string, std::int64_t, std::string, std::int64_t>> positive_keys;
        for (const auto* c : circs) {
            SspSample s;
            s.species = species;
            s.sequence = make_pair_sequence(genome, c->chrom, c->site_a, c->chrom, c->site_b, cfg.context);
            s.label = 1;
            out.samples.push_back(std::move(s));
            positive_keys.insert({c->chrom, c->site_a, c->chrom, c->site_b});
            ++counts.positives;
        }

        const auto target =
            static_cast<std::int64_t>(std::floor(cfg.neg_ratio * static_cast<double>(counts.positives)));
        Rng rng(Rng::mix(cfg.seed, fnv1a(species) ^ 0x5350ull));
        std::int64_t drawn = 0;
        const std::int64_t max_attempts = 200 * target + 1000;
        for (std::int64_t attempt = 0; attempt < max_attempts && drawn < target; ++attempt) {
            const auto u = rng.uniform_int(circs.size());
            auto v = rng.uniform_int(circs.size() - 1);
            if (v >= u) ++v;  // u != v
            const auto* cu = circs[u];
            const auto* cv = circs[v];
            const std::int64_t pu = rng.uniform_int(2) ? cu->site_a : cu->site_b;
            const std::int64_t pv = rng.uniform_int(2) ? cv->site_a : cv->site_b;
            auto first = std::make_pair(cu->chrom, pu), second = std::make_pair(cv->chrom, pv);
            if (second < first) std::swap(first, second);
            if (first == second) continue;  // two circRNAs sharing a site
            const auto key = std::make_tuple(first.first, first.second, second.first, second.second);
            if (positive_keys.count(key)) continue;  // never duplicate a positive pair
            SspSample s;
            s.species = species;
            s.sequence =
                make_pair_sequence(genome, first.first, first.second, second.first, second.second, cfg.context);
            s.label = 0;
            out.samples.push_back(std::move(s));
            ++drawn;
        }
        counts.negatives = drawn;
        if (drawn < target)
            throw std::runtime_error("build_ssp_dataset: species '" + species + "' yielded only " +
                                     std::to_string(drawn) + " of " + std::to_string(target) +
                                     " negative pairs (positive collisions exhausted the draw budget)");
    }

    std::int64_t pos = 0, neg = 0;
    for (const auto& [sp, c] : out.manifest.per_species) {
        pos += c.positives;
        neg += c.negatives;
    }
    out.manifest.ratio = pos > 0 ? static_cast<double>(neg) / static_cast<double>(pos) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: one record per line, tab-separated.

inline void write_ssd_dataset(std::ostream& out, const std::vector<SsdSample>& samples) {
    for (const auto& s : samples) {
        out << s.species << '\t' << s.window << '\t';
        for (std::size_t i = 0; i < s.label_positions.size(); ++i)
            out << (i ? "," : "") << s.label_positions[i];
        out << '\n';
    }
}

inline std::vector<SsdSample> read_ssd_dataset(std::istream& in) {
    std::vector<SsdSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
        SsdSample s;
        s.species = fields[0];
        s.window = fields[1];
        if (!fields[2].empty())
            for (const auto& tok : split(fields[2], ',')) {
                const int p = std::stoi(tok);
                if (p < 0 || p >= static_cast<int>(s.window.size()))
                    throw ParseError(line_no, "label position " + tok + " outside window");
                s.label_positions.push_back(p);
            }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_ssp_dataset(std::ostream& out, const std::vector<SspSample>& samples) {
    for (const auto& s : samples) out << s.species << '\t' << s.sequence << '\t' << s.label << '\n';
}

inline std::vector<SspSample> read_ssp_dataset(std::istream& in) {
    std::vector<SspSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
        SspSample s;
        s.species = fields[0];
        s.sequence = fields[1];
        if (fields[2] != "0" && fields[2] != "1") throw ParseError(line_no, "label must be 0 or 1");
        s.label = fields[2][0] - '0';
        // spacer invariant: exactly 5 M characters at [C, C+5)
        if (s.sequence.size() < 7 || (s.sequence.size() - 5) % 2 != 0)
            throw ParseError(line_no, "sequence length incompatible with context+spacer layout");
        const std::size_t c = (s.sequence.size() - 5) / 2;
        for (std::size_t i = 0; i < s.sequence.size(); ++i) {
            const bool in_spacer = i >= c && i < c + 5;
            if (in_spacer != (s.sequence[i] == 'M'))
                throw ParseError(line_no, in_spacer ? "spacer position lacks 'M'" : "'M' outside spacer");
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
    out << "task=" << m.task << '\n';
    if (m.task == "ssd") out << "window=" << m.window << '\n';
    if (m.task == "ssp") out << "context=" << m.context << '\n';
    out << "neg_per_pos=" << m.neg_per_pos << '\n';
    out << "seed=" << m.seed << '\n';
    out << "ratio=" << std::fixed << std::setprecision(4) << m.ratio << '\n';
    out.unsetf(std::ios::fixed);
    out << "# species\tpositives\tnegatives\ttotal\n";
    for (const auto& [sp, c] : m.per_species)
        out << sp << '\t' << c.positives << '\t' << c.negatives << '\t' << c.total() << '\n';
    for (const auto& w : m.warnings) out << "# warning: " << w << '\n';
}

inline DatasetManifest read_manifest(std::istream& in) {
    DatasetManifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "task") m.task = val;
            else if (key == "window") m.window = std::stoi(val);
            else if (key == "context") m.context = std::stoi(val);
            else if (key == "neg_per_pos") m.neg_per_pos = std::stod(val);
            else if (key == "seed") m.seed = std::stoull(val);
            else if (key == "ratio") m.ratio = std::stod(val);
        } else {
            const auto fields = split(line, '\t');
            if (fields.size() == 4)
                m.per_species[fields[0]] = {std::stoll(fields[1]), std::stoll(fields[2])};
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Splitting and batching

/// Seeded uniform split into train/val/test. Fractions must sum to 1.
template <class Sample>
std::array<std::vector<Sample>, 3> split_dataset(const std::vector<Sample>& samples,
                                                 std::array<double, 3> fractions, std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_dataset: fractions must sum to 1");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(seed, 0x53504c49ull));
    rng.shuffle(order);
    const auto n = samples.size();
    const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    std::array<std::vector<Sample>, 3> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[order[i]];
        if (i < n_train) out[0].push_back(s);
        else if (i < n_train + n_val) out[1].push_back(s);
        else out[2].push_back(s);
    }
    return out;
}

/// Yields batches containing exactly batch_size / n_species samples from each
/// species, drawn without replacement within an epoch; a species whose pool
/// runs out is reshuffled and recycled. One epoch covers the largest pool once.
class BalancedBatchIterator {
public:
    BalancedBatchIterator(std::vector<std::int64_t> pool_sizes, int batch_size, std::uint64_t seed)
        : pool_sizes_(std::move(pool_sizes)), batch_size_(batch_size) {
        const auto s = static_cast<int>(pool_sizes_.size());
        if (s == 0) throw std::invalid_argument("BalancedBatchIterator: no species pools");
        if (batch_size < s)
            throw std::invalid_argument("BalancedBatchIterator: batch_size " + std::to_string(batch_size) +
                                        " < species count " + std::to_string(s));
        if (batch_size % s != 0)
            throw std::invalid_argument("BalancedBatchIterator: batch_size " + std::to_string(batch_size) +
                                        " not divisible by species count " + std::to_string(s));
        quota_ = batch_size / s;
        std::int64_t max_pool = 0;
        for (std::int64_t p : pool_sizes_) {
            if (p <= 0) throw std::invalid_argument("BalancedBatchIterator: empty species pool");
            max_pool = std::max(max_pool, p);
        }
        batches_per_epoch_ = (max_pool + quota_ - 1) / quota_;
        for (std::size_t i = 0; i < pool_sizes_.size(); ++i) {
            rngs_.emplace_back(Rng::mix(seed, 0xBA7C4 + i));
            queues_.emplace_back();
            refill(static_cast<int>(i));
        }
    }

    int quota() const { return static_cast<int>(quota_); }
    std::int64_t batches_per_epoch() const { return batches_per_epoch_; }

    /// Next batch as (species index, sample index) pairs, species-major order.
    std::vector<std::pair<int, std::int64_t>> next() {
        std::vector<std::pair<int, std::int64_t>> batch;
        batch.reserve(static_cast<std::size_t>(batch_size_));
        for (std::size_t sp = 0; sp < pool_sizes_.size(); ++sp)
            for (std::int64_t q = 0; q < quota_; ++q) {
                if (queues_[sp].empty()) refill(static_cast<int>(sp));
                batch.emplace_back(static_cast<int>(sp), queues_[sp].back());
                queues_[sp].pop_back();
            }
        return batch;
    }

private:
    void refill(int sp) {
        auto& q = queues_[static_cast<std::size_t>(sp)];
        q.resize(static_cast<std::size_t>(pool_sizes_[static_cast<std::size_t>(sp)]));
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<std::int64_t>(i);
        rngs_[static_cast<std::size_t>(sp)].shuffle(q);
    }

    std::vector<std::int64_t> pool_sizes_;
    int batch_size_;
    std::int64_t quota_ = 0;
    std::int64_t batches_per_epoch_ = 0;
    std::vector<Rng> rngs_;
    std::vector<std::vector<std::int64_t>> queues_;
};

}  // namespace circkit
