#pragma once

// Planted-motif synthetic corpora for training experiments. Each species gets
// its own chromosome and an 8-mer site marker. Every circRNA carries an
// inverted-repeat pairing key at the inner context edges of its two sites,
// like the repeats that flank circularizing exons: a 16-mer [anchor|tip]
// ends context_radius bases downstream of the lower site, and its reverse
// complement begins the same distance upstream of the higher site. The anchor
// is shared corpus-wide, the 4-base tip names the circRNA's key class. In a
// concatenated pairing sample the two copies face each other across the
// spacer: true pairs always show the anchored palindrome, while cross-circRNA
// pairs lack an edge key on ~3/4 of junction sides and mismatch in the key
// tip otherwise. Decoy markers from *other* species create conflicting
// detection signals that a single shared head cannot resolve.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "circkit/common.hpp"
#include "circkit/genome.hpp"

namespace circkit::synthetic {

struct CorpusSpec {
    int n_species = 3;
    std::int64_t genome_len = 200000;
    int n_circs = 100;
    std::int64_t min_span = 60;
    std::int64_t max_span = 5000;
    int n_keys = 16;
    bool keys_on_both_edges = false;  // true: every site carries the repeat on both edges
    int context_radius = 20;  // must match the pairing dataset's (C-1)/2
    int decoys_per_species = 100;
    std::uint64_t seed = 1;
};

struct Corpus {
    Genome genome;
    std::vector<CircRnaAnnotation> annotations;
    std::vector<std::string> species;
};

inline std::string random_kmer(Rng& rng, int k) {
    static constexpr char kBases[] = {'A', 'C', 'G', 'T'};
    std::string s(static_cast<std::size_t>(k), 'A');
    for (auto& c : s) c = kBases[rng.uniform_int(4)];
    return s;
}


inline Corpus make_corpus(const CorpusSpec& spec) {
    constexpr int kMarkerLen = 8, kKeyLen = 16;
    constexpr std::int64_t kZone = 40;  // min distance between planted zones
    Rng rng(Rng::mix(spec.seed, 0xC0121ull));

    std::vector<std::string> markers;
    std::set<std::string> used;
    while (static_cast<int>(markers.size()) < spec.n_species) {
        auto m = random_kmer(rng, kMarkerLen);
        if (used.insert(m).second) markers.push_back(m);
    }
    // [anchor | tip]: the 12-base anchor is shared corpus-wide and makes the
    // junction salient; the 4-base tip identifies the key class and sits
    // right at the spacer, so a complementary tip pair falls inside one conv
    // kernel. Tips keep pairwise Hamming distance >= 2 so key classes never
    // mimic each other across a junction.
    const std::string anchor = random_kmer(rng, kKeyLen - 4);
    std::vector<std::string> keys;
    std::vector<std::string> tips;
    while (static_cast<int>(keys.size()) < spec.n_keys) {
        auto tip = random_kmer(rng, 4);
        bool ok = true;
        for (const auto& t : tips) {
            int diff = 0;
            for (int i = 0; i < 4; ++i) diff += t[static_cast<std::size_t>(i)] != tip[static_cast<std::size_t>(i)];
            if (diff < 2) ok = false;
        }
        if (!ok) continue;
        tips.push_back(tip);
        keys.push_back(anchor + tip);
    }

    Corpus corpus;
    for (int sp = 0; sp < spec.n_species; ++sp) {
        const std::string species = "sp" + std::to_string(sp);
        const std::string chrom = "chr_" + species;
        corpus.species.push_back(species);

        std::string seq = random_kmer(rng, static_cast<int>(spec.genome_len));
        std::vector<std::int64_t> zones;
        auto far_from_zones = [&](std::int64_t p) {
            for (std::int64_t z : zones)
                if (std::llabs(z - p) < kZone) return false;
            return true;
        };
        auto plant_marker = [&](std::int64_t site, const std::string& marker) {
            // marker covers [site-3, site+4]
            for (int i = 0; i < kMarkerLen; ++i)
                seq[static_cast<std::size_t>(site - 3 + i)] = marker[static_cast<std::size_t>(i)];
        };
        const std::int64_t edge = spec.context_radius;
        auto plant_key_downstream = [&](std::int64_t site, const std::string& key) {
            // fills [site + edge - 15, site + edge]: the right edge of the
            // lower site's extracted context
            for (int i = 0; i < kKeyLen; ++i)
                seq[static_cast<std::size_t>(site + edge - kKeyLen + 1 + i)] = key[static_cast<std::size_t>(i)];
        };
        auto plant_key_upstream = [&](std::int64_t site, const std::string& key) {
            // fills [site - edge, site - edge + 15] with the reverse
            // complement: the left edge of the higher site's extracted context
            const std::string rc = reverse_complement(key);
            for (int i = 0; i < kKeyLen; ++i)
                seq[static_cast<std::size_t>(site - edge + i)] = rc[static_cast<std::size_t>(i)];
        };

        for (int c = 0; c < spec.n_circs; ++c) {
            std::int64_t a = 0, b = 0;
            for (int attempt = 0; attempt < 10000; ++attempt) {
                const auto span = spec.min_span +
                                  static_cast<std::int64_t>(rng.uniform_int(
                                      static_cast<std::uint64_t>(spec.max_span - spec.min_span + 1)));
                a = 50 + static_cast<std::int64_t>(
                             rng.uniform_int(static_cast<std::uint64_t>(spec.genome_len - span - 100)));
                b = a + span;
                if (far_from_zones(a) && far_from_zones(b)) break;
                a = b = 0;
            }
            if (a == 0) throw std::runtime_error("synthetic corpus: could not place circRNA sites");
            zones.push_back(a);
            zones.push_back(b);
            const auto& key = keys[rng.uniform_int(keys.size())];
            plant_marker(a, markers[static_cast<std::size_t>(sp)]);
            plant_marker(b, markers[static_cast<std::size_t>(sp)]);
            plant_key_downstream(a, key);
            plant_key_upstream(b, key);
            if (spec.keys_on_both_edges) {
                plant_key_upstream(a, key);
                plant_key_downstream(b, key);
            }
            corpus.annotations.push_back({species, chrom, a, b, species + "_c" + std::to_string(c)});
        }

        // decoys: markers of other species at non-site positions
        for (int d = 0; d < spec.decoys_per_species && spec.n_species > 1; ++d) {
            for (int attempt = 0; attempt < 10000; ++attempt) {
                const auto p = 50 + static_cast<std::int64_t>(rng.uniform_int(
                                        static_cast<std::uint64_t>(spec.genome_len - 100)));
                if (!far_from_zones(p)) continue;
                zones.push_back(p);
                int other = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.n_species - 1)));
                if (other >= sp) ++other;
                plant_marker(p, markers[static_cast<std::size_t>(other)]);
                break;
            }
        }
        corpus.genome.records.push_back({chrom, std::move(seq)});
    }
    return corpus;
}

}  // namespace circkit::synthetic
