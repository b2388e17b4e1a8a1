#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "circkit/common.hpp"

namespace circkit {

/// One chromosome/contig: identifier plus an uppercase A/C/G/T/N sequence.
struct GenomeRecord {
    std::string id;
    std::string sequence;
};

struct Genome {
    std::vector<GenomeRecord> records;

    const GenomeRecord& find(const std::string& chrom) const {
        for (const auto& r : records)
            if (r.id == chrom) return r;
        throw std::runtime_error("unknown chromosome '" + chrom + "'");
    }
    bool contains(const std::string& chrom) const {
        for (const auto& r : records)
            if (r.id == chrom) return true;
        return false;
    }
};

/// An annotated circRNA: a pair of 0-based splice-site positions on one chromosome.
struct CircRnaAnnotation {
    std::string species;
    std::string chrom;
    std::int64_t site_a = 0;
    std::int64_t site_b = 0;
    std::string circ_id;
};

struct SpliceSite {
    std::string chrom;
    std::int64_t pos = 0;
    std::string species;
};

inline char normalize_base(char c) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    switch (u) {
        case 'A':
        case 'C':
        case 'G':
        case 'T':
            return u;
        default:
            return 'N';
    }
}

/// Parses FASTA text. Header lines start with '>'; the first whitespace-separated
/// token is the record id. Sequence lines are concatenated, uppercased, and any
/// character outside {A,C,G,T} becomes 'N'.
inline std::vector<GenomeRecord> parse_fasta(std::istream& in) {
    std::vector<GenomeRecord> records;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0, header_line = 0;
    bool have_record = false;

    auto finish = [&] {
        if (!have_record) return;
        if (records.back().sequence.empty())
            throw ParseError(header_line, "empty sequence for header '" + records.back().id + "'");
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '>') {
            finish();
            std::size_t start = 1;
            while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
            std::size_t end = start;
            while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
            const std::string id = line.substr(start, end - start);
            if (id.empty()) throw ParseError(line_no, "header with empty id");
            if (!ids.insert(id).second) throw ParseError(line_no, "duplicate record id '" + id + "'");
            records.push_back({id, {}});
            have_record = true;
            header_line = line_no;
        } else {
            if (!have_record) throw ParseError(line_no, "sequence data before first '>' header");
            auto& seq = records.back().sequence;
            seq.reserve(seq.size() + line.size());
            for (char c : line) seq.push_back(normalize_base(c));
        }
    }
    finish();
    return records;
}

/// Writes FASTA with sequence lines wrapped at `width` columns.
inline void serialize_fasta(std::ostream& out, const std::vector<GenomeRecord>& records, int width = 60) {
    for (const auto& r : records) {
        out << '>' << r.id << '\n';
        for (std::size_t i = 0; i < r.sequence.size(); i += static_cast<std::size_t>(width))
            out << std::string_view(r.sequence).substr(i, static_cast<std::size_t>(width)) << '\n';
    }
}

/// Parses the annotation table: tab-separated rows of
/// species, chrom, site_a, site_b, circ_id with 0-based positions.
/// Lines starting with '#' are comments. Rows are validated against the genome.
inline std::vector<CircRnaAnnotation> parse_annotations(std::istream& in, const Genome& genome) {
    std::vector<CircRnaAnnotation> out;
    std::set<std::tuple<std::string, std::string, std::int64_t, std::int64_t>> seen;
    std::string line;
    std::size_t line_no = 0;

    auto parse_pos = [&](const std::string& field) -> std::int64_t {
        if (field.empty()) throw ParseError(line_no, "empty position field");
        for (char c : field)
            if (!std::isdigit(static_cast<unsigned char>(c)))
                throw ParseError(line_no, "non-integer position '" + field + "'");
        return std::stoll(field);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 5)
            throw ParseError(line_no, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
        CircRnaAnnotation a;
        a.species = fields[0];
        a.chrom = fields[1];
        a.site_a = parse_pos(fields[2]);
        a.site_b = parse_pos(fields[3]);
        a.circ_id = fields[4];
        if (a.species.empty() || a.chrom.empty() || a.circ_id.empty())
            throw ParseError(line_no, "empty species/chrom/circ_id field");
        if (!genome.contains(a.chrom)) throw ParseError(line_no, "unknown chromosome '" + a.chrom + "'");
        if (a.site_a >= a.site_b)
            throw ParseError(line_no, "site_a >= site_b (" + std::to_string(a.site_a) + " >= " +
                                          std::to_string(a.site_b) + ")");
        const auto len = static_cast<std::int64_t>(genome.find(a.chrom).sequence.size());
        if (a.site_b >= len)
            throw ParseError(line_no, "position out of range (site_b " + std::to_string(a.site_b) +
                                          " >= chromosome length " + std::to_string(len) + ")");
        if (!seen.insert({a.species, a.chrom, a.site_a, a.site_b}).second)
            throw ParseError(line_no, "duplicate annotation (" + a.species + ", " + a.chrom + ", " +
                                          std::to_string(a.site_a) + ", " + std::to_string(a.site_b) + ")");
        out.push_back(std::move(a));
    }
    return out;
}

inline void serialize_annotations(std::ostream& out, const std::vector<CircRnaAnnotation>& anns) {
    out << "# species\tchrom\tsite_a\tsite_b\tcirc_id\n";
    for (const auto& a : anns)
        out << a.species << '\t' << a.chrom << '\t' << a.site_a << '\t' << a.site_b << '\t' << a.circ_id
            << '\n';
}

/// Window of 2*radius+1 bases centered on `center`; out-of-bounds filled with 'N'.
/// The center base sits at index `radius` of the result.
inline std::string extract_window(const GenomeRecord& record, std::int64_t center, std::int64_t radius) {
    const auto len = static_cast<std::int64_t>(record.sequence.size());
    if (center < 0 || center >= len)
        throw std::out_of_range("extract_window: center " + std::to_string(center) +
                                " outside chromosome '" + record.id + "' of length " + std::to_string(len));
    if (radius < 0) throw std::invalid_argument("extract_window: radius must be >= 0");
    std::string out(static_cast<std::size_t>(2 * radius + 1), 'N');
    const std::int64_t lo = std::max<std::int64_t>(0, center - radius);
    const std::int64_t hi = std::min<std::int64_t>(len - 1, center + radius);
    for (std::int64_t p = lo; p <= hi; ++p)
        out[static_cast<std::size_t>(p - (center - radius))] = record.sequence[static_cast<std::size_t>(p)];
    return out;
}

/// Reverse complement. Not applied anywhere by default; strand handling is
/// left to callers.
inline std::string reverse_complement(std::string_view seq) {
    std::string out(seq.rbegin(), seq.rend());
    for (char& c : out) {
        switch (c) {
            case 'A': c = 'T'; break;
            case 'T': c = 'A'; break;
            case 'C': c = 'G'; break;
            case 'G': c = 'C'; break;
            default: c = 'N'; break;
        }
    }
    return out;
}

/// Distinct splice sites per (species, chrom), sorted by position.
inline std::map<std::pair<std::string, std::string>, std::vector<std::int64_t>> collect_sites(
    const std::vector<CircRnaAnnotation>& anns) {
    std::map<std::pair<std::string, std::string>, std::set<std::int64_t>> sets;
    for (const auto& a : anns) {
        sets[{a.species, a.chrom}].insert(a.site_a);
        sets[{a.species, a.chrom}].insert(a.site_b);
    }
    std::map<std::pair<std::string, std::string>, std::vector<std::int64_t>> out;
    for (auto& [key, s] : sets) out[key] = std::vector<std::int64_t>(s.begin(), s.end());
    return out;
}

}  // namespace circkit
