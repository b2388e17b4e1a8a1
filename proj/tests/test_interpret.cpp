#include <catch2/catch.hpp>

#include <cmath>
#include <sstream>

#include "circkit/interpret.hpp"
#include "circkit/model.hpp"

using namespace circkit;

namespace {

ModelConfig toy_config(Task task = Task::ssd) {
    ModelConfig cfg;
    cfg.task = task;
    cfg.embed_dim = 8;
    cfg.conv_blocks = 1;
    cfg.kernel = 3;
    cfg.dilations = {1};
    cfg.attn_blocks = 1;
    cfg.heads = 2;
    cfg.random_features = 8;
    cfg.species = {"sp0"};
    cfg.seed = 21;
    return cfg;
}

std::string random_window(Rng& rng, int len) {
    static constexpr char kBases[] = {'A', 'C', 'G', 'T'};
    std::string s(static_cast<std::size_t>(len), 'A');
    for (auto& c : s) c = kBases[rng.uniform_int(4)];
    return s;
}

}  // namespace

TEST_CASE("saliency of a purely linear map is the absolute weight profile", "[interpret]") {
    Rng rng(5);
    const int L = 7, C = 5;
    std::vector<double> wv(static_cast<std::size_t>(L) * C);
    for (auto& v : wv) v = rng.uniform(-2.0, 2.0);
    auto w = Tensor64::from_vector(wv, {L, C});

    auto x = one_hot_encode<double>("ACGTNAC", kSsdAlphabet);
    x.set_requires_grad();
    auto y = sum(mul(x, w));
    auto s = saliency_from_graph(x, y);

    REQUIRE(s.size() == static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
        double expect = 0;
        for (int j = 0; j < C; ++j) expect += std::abs(wv[static_cast<std::size_t>(i * C + j)]);
        REQUIRE(s[static_cast<std::size_t>(i)] == Approx(expect).margin(1e-12));
    }
}

TEST_CASE("model saliency is non-negative and length preserving", "[interpret]") {
    ModelT<double> model(toy_config());
    Rng rng(9);
    for (int t = 0; t < 3; ++t) {
        const auto window = random_window(rng, 21);
        auto s = saliency_map(model, window, "sp0");
        REQUIRE(s.size() == window.size());
        for (double v : s) REQUIRE(v >= 0.0);
    }

    // pairing-score target works on the 6-channel model
    ModelT<double> pmodel(toy_config(Task::ssp));
    auto sp = saliency_map(pmodel, "ACGTAMMMMMACGTA", "sp0", SaliencyTarget::ssp());
    REQUIRE(sp.size() == 15);
    for (double v : sp) REQUIRE(v >= 0.0);
}

TEST_CASE("model saliency matches finite differences of the target logit", "[interpret]") {
    ModelT<double> model(toy_config());
    const std::string window = "ACGTACGTA";
    const int L = 9, C = 5, target = L / 2;

    auto s = saliency_map(model, window, "sp0", SaliencyTarget::ssd_center());

    auto eval = [&](const std::vector<double>& flat) {
        auto x = Tensor64::from_vector(flat, {1, L, C});
        std::vector<std::string> sp{"sp0"};
        return model.forward_ssd(x, sp).at(0, target);
    };
    auto base = one_hot_encode<double>(window, kSsdAlphabet).values();
    const double h = 1e-5;
    for (int i = 0; i < L; ++i) {
        double fd_sum = 0;
        for (int j = 0; j < C; ++j) {
            auto p = base;
            p[static_cast<std::size_t>(i * C + j)] += h;
            const double up = eval(p);
            p[static_cast<std::size_t>(i * C + j)] -= 2 * h;
            fd_sum += std::abs((up - eval(p)) / (2 * h));
        }
        const double denom = std::max({std::abs(fd_sum), std::abs(s[static_cast<std::size_t>(i)]), 1e-8});
        REQUIRE(std::abs(fd_sum - s[static_cast<std::size_t>(i)]) / denom < 1e-3);
    }
}

TEST_CASE("average_saliency means, errors, and scalar commutation", "[interpret]") {
    REQUIRE(average_saliency<double>({{1, 2}, {1, 2}}) == std::vector<double>{1, 2});
    REQUIRE(average_saliency<double>({{0, 2}, {2, 0}}) == std::vector<double>{1, 1});

    Rng rng(13);
    std::vector<std::vector<double>> maps;
    for (int k = 0; k < 7; ++k) {
        std::vector<double> m(11);
        for (auto& v : m) v = rng.uniform();
        maps.push_back(m);
    }
    auto mean = average_saliency(maps);
    for (int i = 0; i < 11; ++i) {
        double acc = 0;
        for (const auto& m : maps) acc += m[static_cast<std::size_t>(i)];
        REQUIRE(mean[static_cast<std::size_t>(i)] == Approx(acc / 7.0).margin(1e-6));
    }

    // mean(c * maps) == c * mean(maps)
    auto scaled = maps;
    for (auto& m : scaled)
        for (auto& v : m) v *= 3.5;
    auto scaled_mean = average_saliency(scaled);
    for (int i = 0; i < 11; ++i)
        REQUIRE(scaled_mean[static_cast<std::size_t>(i)] == Approx(3.5 * mean[static_cast<std::size_t>(i)]).margin(1e-9));

    REQUIRE_THROWS_WITH(average_saliency<double>({}), Catch::Contains("empty"));
    REQUIRE_THROWS_WITH(average_saliency<double>({{1, 2}, {1}}), Catch::Contains("unequal"));
}

TEST_CASE("saliency logos normalize rows and ignore N", "[interpret]") {
    // single sequence with saliency 1 at the center: the center row is pure A
    {
        std::vector<std::string> seqs{"CCACC"};
        std::vector<std::vector<double>> maps{{0.0, 0.0, 1.0, 0.0, 0.0}};
        auto logo = saliency_logo<double>(seqs, maps, 1);
        REQUIRE(logo.weights.size() == 3);
        REQUIRE(logo.weights[1] == std::array<double, 4>{1, 0, 0, 0});
    }
    // A and T with equal saliency split the row evenly
    {
        std::vector<std::string> seqs{"CAC", "CTC"};
        std::vector<std::vector<double>> maps{{0, 0.7, 0}, {0, 0.7, 0}};
        auto logo = saliency_logo<double>(seqs, maps, 1);
        REQUIRE(logo.weights[1][0] == Approx(0.5));
        REQUIRE(logo.weights[1][3] == Approx(0.5));
    }
    // N bases contribute to no base; an all-N position keeps a zero row
    {
        std::vector<std::string> seqs{"CNC"};
        std::vector<std::vector<double>> maps{{0.5, 0.9, 0.5}};
        auto logo = saliency_logo<double>(seqs, maps, 1);
        REQUIRE(logo.weights[1] == std::array<double, 4>{0, 0, 0, 0});
    }
    // random corpus: every nonzero row sums to 1 and matches a direct tally
    {
        Rng rng(31);
        const int L = 21, radius = 5, n = 12;
        std::vector<std::string> seqs;
        std::vector<std::vector<double>> maps;
        for (int k = 0; k < n; ++k) {
            seqs.push_back(random_window(rng, L));
            std::vector<double> m(L);
            for (auto& v : m) v = rng.uniform();
            maps.push_back(m);
        }
        auto logo = saliency_logo<double>(seqs, maps, radius);
        for (int off = -radius; off <= radius; ++off) {
            std::array<double, 4> tally{0, 0, 0, 0};
            for (int k = 0; k < n; ++k) {
                const int idx = L / 2 + off;
                const char base = seqs[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
                const auto channel = std::string("ACGT").find(base);
                if (channel != std::string::npos)
                    tally[channel] += maps[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
            }
            const double total = tally[0] + tally[1] + tally[2] + tally[3];
            const auto& row = logo.weights[static_cast<std::size_t>(off + radius)];
            if (total > 0) {
                REQUIRE(std::abs(row[0] + row[1] + row[2] + row[3] - 1.0) <= 1e-9);
                for (int b = 0; b < 4; ++b)
                    REQUIRE(row[static_cast<std::size_t>(b)] == Approx(tally[static_cast<std::size_t>(b)] / total).margin(1e-12));
            }
        }
    }
    // misaligned inputs are rejected
    std::vector<std::string> bad_seqs{"ACG"};
    std::vector<std::vector<double>> bad_maps{{1.0}};
    REQUIRE_THROWS_WITH(saliency_logo<double>(bad_seqs, bad_maps, 1), Catch::Contains("aligned"));
}

TEST_CASE("polyat_scan run detection", "[interpret]") {
    //                       0123456789
    const std::string seq = "CGCGAAAAAGCGCGCGCGCG";
    REQUIRE(polyat_scan(seq, 6, 10, 5));          // window covers the AAAAA run
    REQUIRE_FALSE(polyat_scan(seq, 15, 6, 5));    // window misses it
    REQUIRE_FALSE(polyat_scan("ACGTACGTACGT", 6, 10, 5));  // max run 1

    // runs of exactly 4 do not satisfy run >= 5
    REQUIRE_FALSE(polyat_scan("CGAAAACGTTTTCG", 7, 14, 5));
    REQUIRE(polyat_scan("CGAAAACGTTTTCG", 7, 14, 4));

    REQUIRE_THROWS_WITH(polyat_scan("ACGT", 9, 4, 5), Catch::Contains("outside sequence"));
}

TEST_CASE("polyat_scan agrees with a substring-search oracle", "[interpret]") {
    Rng rng(41);
    const std::string run_a(5, 'A'), run_t(5, 'T');
    for (int t = 0; t < 10000; ++t) {
        const int len = 5 + static_cast<int>(rng.uniform_int(60));
        auto s = random_window(rng, len);
        const bool oracle = s.find(run_a) != std::string::npos || s.find(run_t) != std::string::npos;
        REQUIRE(has_polyat_run(s, 5) == oracle);
    }
}

TEST_CASE("polyat baselines: closed forms, DP vs Monte Carlo", "[interpret]") {
    // min_run=1: P = 1 - (1/2)^n
    for (int n : {1, 3, 10})
        REQUIRE(exact_polyat_probability(n, 1) == Approx(1.0 - std::pow(0.5, n)).margin(1e-12));

    // window=5, min_run=5: only AAAAA and TTTTT pass
    REQUIRE(exact_polyat_probability(5, 5) == Approx(2.0 / 1024.0).margin(1e-15));

    // impossible run lengths
    REQUIRE(exact_polyat_probability(4, 5) == 0.0);
    REQUIRE(exact_polyat_probability(0, 5) == 0.0);

    // Monte Carlo converges to the DP value within half a percentage point
    const double dp = exact_polyat_probability(101, 5);
    const double mc = polyat_random_baseline(101, 5, 100000, 2026);
    REQUIRE(std::abs(mc - dp) < 0.005);

    // the 95% interval half-width at 1e5 trials is under 0.4 points and
    // covers the exact value
    const double half = 1.96 * std::sqrt(mc * (1.0 - mc) / 100000.0);
    REQUIRE(half < 0.004);
    REQUIRE(std::abs(mc - dp) <= half + 1e-12);
}

TEST_CASE("interpretation outputs serialize", "[interpret]") {
    SaliencyProfile profile;
    profile.values = {0.5, 1.5, 0.25};
    profile.center_index = 1;
    profile.species = "sp0";
    profile.n_sequences = 4;
    std::ostringstream ps;
    write_profile_tsv(ps, profile);
    REQUIRE(ps.str().find("# species: sp0") != std::string::npos);
    REQUIRE(ps.str().find("-1\t0.5") != std::string::npos);
    REQUIRE(ps.str().find("0\t1.5") != std::string::npos);

    LogoMatrix logo;
    logo.radius = 1;
    logo.weights = {{1, 0, 0, 0}, {0.25, 0.25, 0.25, 0.25}, {0, 0, 0, 1}};
    std::ostringstream ls;
    write_logo_tsv(ls, logo);
    REQUIRE(ls.str().find("position\twA\twC\twG\twT") != std::string::npos);
    REQUIRE(ls.str().find("-1\t1\t0\t0\t0") != std::string::npos);

    std::ostringstream svg;
    render_logo_svg(svg, logo);
    REQUIRE(svg.str().find("<svg") != std::string::npos);
    REQUIRE(svg.str().find("</svg>") != std::string::npos);
}
