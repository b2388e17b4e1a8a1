#include <catch2/catch.hpp>

#include <sstream>

#include "circkit/genome.hpp"

using namespace circkit;

namespace {

std::vector<GenomeRecord> parse(const std::string& text) {
    std::istringstream in(text);
    return parse_fasta(in);
}

Genome toy_genome(std::int64_t len = 1000) {
    Genome g;
    std::string seq;
    const char bases[] = {'A', 'C', 'G', 'T'};
    for (std::int64_t i = 0; i < len; ++i) seq.push_back(bases[i % 4]);
    g.records.push_back({"chr1", seq});
    return g;
}

}  // namespace

TEST_CASE("parse_fasta basic records and normalization", "[genome]") {
    auto one = parse(">chr1\nACGT\n");
    REQUIRE(one.size() == 1);
    REQUIRE(one[0].id == "chr1");
    REQUIRE(one[0].sequence == "ACGT");

    auto two = parse(">c1\nacgn\n>c2\nTT\n");
    REQUIRE(two.size() == 2);
    REQUIRE(two[0].sequence == "ACGN");
    REQUIRE(two[1].sequence == "TT");

    auto iupac = parse(">c1\nAXGT\n");
    REQUIRE(iupac[0].sequence == "ANGT");

    auto multiline = parse(">c1 description text\nACG\nTAC\n");
    REQUIRE(multiline[0].id == "c1");
    REQUIRE(multiline[0].sequence == "ACGTAC");
}

TEST_CASE("parse_fasta reports malformed input with line numbers", "[genome]") {
    REQUIRE_THROWS_MATCHES(parse("ACGT\n"), ParseError,
                           Catch::Message("line 1: sequence data before first '>' header"));
    REQUIRE_THROWS_WITH(parse(">c1\n>c2\nACGT\n"), Catch::Contains("empty sequence"));
    REQUIRE_THROWS_WITH(parse(">c1\nAC\n>c1\nGT\n"), Catch::Contains("duplicate record id"));
    REQUIRE_THROWS_WITH(parse(">c1\nACGT\n>c2\n"), Catch::Contains("empty sequence for header 'c2'"));
}

TEST_CASE("fasta round-trips through 60-column serialization", "[genome]") {
    Rng rng(2024);
    std::vector<GenomeRecord> records;
    const char bases[] = {'A', 'C', 'G', 'T', 'N'};
    for (int r = 0; r < 5; ++r) {
        std::string seq;
        const int len = 1 + static_cast<int>(rng.uniform_int(400));
        for (int i = 0; i < len; ++i) seq.push_back(bases[rng.uniform_int(5)]);
        records.push_back({"ctg" + std::to_string(r), seq});
    }
    std::ostringstream out;
    serialize_fasta(out, records, 60);
    std::istringstream in(out.str());
    auto back = parse_fasta(in);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        REQUIRE(back[i].id == records[i].id);
        REQUIRE(back[i].sequence == records[i].sequence);
    }
}

TEST_CASE("parse_annotations accepts valid rows and rejects bad ones", "[genome]") {
    auto genome = toy_genome(1000);

    std::istringstream ok("# comment\nbjuncea\tchr1\t100\t700\tbj_c1\n");
    auto anns = parse_annotations(ok, genome);
    REQUIRE(anns.size() == 1);
    REQUIRE(anns[0].species == "bjuncea");
    REQUIRE(anns[0].site_a == 100);
    REQUIRE(anns[0].site_b == 700);

    std::istringstream swapped("bjuncea\tchr1\t700\t100\tbj_c1\n");
    REQUIRE_THROWS_WITH(parse_annotations(swapped, genome), Catch::Contains("site_a >= site_b"));

    std::istringstream oob("bjuncea\tchr1\t100\t5000\tbj_c1\n");
    REQUIRE_THROWS_WITH(parse_annotations(oob, genome), Catch::Contains("position out of range"));

    std::istringstream notint("bjuncea\tchr1\tx100\t700\tbj_c1\n");
    REQUIRE_THROWS_WITH(parse_annotations(notint, genome), Catch::Contains("non-integer position"));

    std::istringstream badchrom("bjuncea\tchr9\t100\t700\tbj_c1\n");
    REQUIRE_THROWS_WITH(parse_annotations(badchrom, genome), Catch::Contains("unknown chromosome"));

    std::istringstream dup("s\tchr1\t1\t2\tc1\ns\tchr1\t1\t2\tc2\n");
    REQUIRE_THROWS_WITH(parse_annotations(dup, genome), Catch::Contains("duplicate annotation"));

    // row-level errors carry the 1-based row number
    std::istringstream late("s\tchr1\t1\t2\tc1\ns\tchr1\t9\t3\tc2\n");
    REQUIRE_THROWS_WITH(parse_annotations(late, genome), Catch::Contains("line 2"));
}

TEST_CASE("extract_window pads with N and centers exactly", "[genome]") {
    GenomeRecord rec{"chr", "ACGTACGTAC"};
    REQUIRE(extract_window(rec, 2, 3) == "NACGTAC");
    REQUIRE(extract_window(rec, 0, 2) == "NNACG");
    REQUIRE(extract_window(rec, 5, 0) == "C");
    REQUIRE_THROWS_WITH(extract_window(rec, 10, 2), Catch::Contains("outside chromosome"));
    REQUIRE_THROWS_WITH(extract_window(rec, -1, 2), Catch::Contains("outside chromosome"));

    // length 2r+1 for the reference radius; the center base sits at index r
    auto genome = toy_genome(6000);
    auto w = extract_window(genome.records[0], 3000, 2500);
    REQUIRE(w.size() == 5001);
    REQUIRE(w[2500] == genome.records[0].sequence[3000]);
}

TEST_CASE("window properties: length, interior substring round-trip", "[genome]") {
    Rng rng(7);
    auto genome = toy_genome(500);
    const auto& rec = genome.records[0];
    for (int t = 0; t < 200; ++t) {
        const auto center = static_cast<std::int64_t>(rng.uniform_int(500));
        const auto radius = static_cast<std::int64_t>(rng.uniform_int(60));
        auto w = extract_window(rec, center, radius);
        REQUIRE(static_cast<std::int64_t>(w.size()) == 2 * radius + 1);
        if (center - radius >= 0 && center + radius < 500)
            REQUIRE(w == rec.sequence.substr(static_cast<std::size_t>(center - radius),
                                             static_cast<std::size_t>(2 * radius + 1)));
    }
}

TEST_CASE("reverse_complement helper", "[genome]") {
    REQUIRE(reverse_complement("ACGTN") == "NACGT");
    REQUIRE(reverse_complement("") == "");
    REQUIRE(reverse_complement(reverse_complement("GATTACA")) == "GATTACA");
}
