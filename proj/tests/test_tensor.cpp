#include <catch2/catch.hpp>

#include <cmath>
#include <cstring>

#include "circkit/oracles.hpp"
#include "circkit/optim.hpp"
#include "circkit/tensor.hpp"

using namespace circkit;

namespace {

std::vector<double> random_vector(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("conv1d identity kernel and bias-only inputs", "[tensor]") {
    // K=1 identity weight: output equals input
    auto x = Tensor64::from_vector({1, 2, 3, 4, 5, 6}, {1, 3, 2});
    auto w = Tensor64::from_vector({1, 0, 0, 1}, {1, 2, 2});
    auto b = Tensor64::zeros({2});
    auto y = conv1d(x, w, b, 1);
    REQUIRE(y.values() == x.values());

    // all-zero input: every position carries the bias
    Rng rng(3);
    auto x0 = Tensor64::zeros({2, 4, 2});
    auto wr = Tensor64::from_vector(random_vector(rng, 3 * 2 * 3), {3, 2, 3});
    auto br = Tensor64::from_vector({0.5, -1.5, 2.0}, {3});
    auto y0 = conv1d(x0, wr, br, 1);
    for (int bi = 0; bi < 2; ++bi)
        for (int l = 0; l < 4; ++l)
            for (int o = 0; o < 3; ++o) REQUIRE(y0.at(bi, l, o) == br.at(o));
}

TEST_CASE("conv1d matches the triple-loop reference", "[tensor]") {
    Rng rng(17);
    for (int dilation : {1, 2, 3}) {
        const int B = 1, L = 7, Ci = 2, K = 3, Co = 2;
        auto xv = random_vector(rng, B * L * Ci);
        auto wv = random_vector(rng, K * Ci * Co);
        auto bv = random_vector(rng, Co);
        auto y = conv1d(Tensor64::from_vector(xv, {B, L, Ci}), Tensor64::from_vector(wv, {K, Ci, Co}),
                        Tensor64::from_vector(bv, {Co}), dilation);
        auto ref = oracle::conv1d_reference(xv, B, L, Ci, wv, K, Co, bv, dilation);
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE(y.values()[i] == Approx(ref[i]).margin(1e-6));
    }
}

TEST_CASE("layer_norm constant, two-point, and random-moment cases", "[tensor]") {
    auto gain = Tensor64::from_vector({1, 1, 1}, {3});
    auto offset = Tensor64::zeros({3});

    // zero-variance slice collapses to the offset
    auto c = layer_norm(Tensor64::from_vector({5, 5, 5}, {1, 3}), gain, offset);
    for (double v : c.values()) REQUIRE(v == Approx(0.0).margin(1e-12));

    // [1,-1] normalizes to +-1/sqrt(1+eps)
    auto gain2 = Tensor64::from_vector({1, 1}, {2});
    auto off2 = Tensor64::zeros({2});
    const double eps = 1e-10;
    auto t = layer_norm(Tensor64::from_vector({1, -1}, {1, 2}), gain2, off2, eps);
    REQUIRE(t.at(0, 0) == Approx(1.0 / std::sqrt(1.0 + eps)).epsilon(1e-9));
    REQUIRE(t.at(0, 1) == Approx(-1.0 / std::sqrt(1.0 + eps)).epsilon(1e-9));

    // random slice: output mean ~ 0, variance ~ 1
    Rng rng(23);
    const int d = 16;
    auto gd = Tensor64::full({d}, 1.0);
    auto od = Tensor64::zeros({d});
    auto x = Tensor64::from_vector(random_vector(rng, d, -3.0, 3.0), {1, d});
    auto y = layer_norm(x, gd, od);
    double mean_v = 0, var_v = 0;
    for (double v : y.values()) mean_v += v;
    mean_v /= d;
    for (double v : y.values()) var_v += (v - mean_v) * (v - mean_v);
    var_v /= d;
    REQUIRE(std::abs(mean_v) < 1e-4);
    REQUIRE(std::abs(var_v - 1.0) < 1e-4);
}

TEST_CASE("global_avg_pool identities and loop oracle", "[tensor]") {
    auto single = global_avg_pool(Tensor64::from_vector({4, 7}, {1, 1, 2}));
    REQUIRE(single.at(0, 0) == 4);
    REQUIRE(single.at(0, 1) == 7);

    auto two = global_avg_pool(Tensor64::from_vector({1, 1, 3, 3}, {1, 2, 2}));
    REQUIRE(two.at(0, 0) == 2);
    REQUIRE(two.at(0, 1) == 2);

    Rng rng(5);
    const int B = 2, L = 5, D = 3;
    auto xv = random_vector(rng, B * L * D);
    auto y = global_avg_pool(Tensor64::from_vector(xv, {B, L, D}));
    for (int b = 0; b < B; ++b)
        for (int d = 0; d < D; ++d) {
            double acc = 0;
            for (int l = 0; l < L; ++l) acc += xv[static_cast<std::size_t>((b * L + l) * D + d)];
            REQUIRE(y.at(b, d) == Approx(acc / L).margin(1e-6));
        }
}

TEST_CASE("backward on linear and quadratic scalars", "[tensor]") {
    auto x = Tensor64::from_vector({1, 2, 3}, {3});
    x.set_requires_grad();
    auto loss = sum(x);
    loss.backward();
    REQUIRE(x.grads() == std::vector<double>{1, 1, 1});

    auto x2 = Tensor64::from_vector({1, 2}, {2});
    x2.set_requires_grad();
    auto loss2 = sum(mul(x2, x2));
    loss2.backward();
    REQUIRE(x2.grads()[0] == Approx(2.0));
    REQUIRE(x2.grads()[1] == Approx(4.0));
}

TEST_CASE("backward rejects non-scalars and repeated calls", "[tensor]") {
    auto x = Tensor64::from_vector({1, 2}, {2});
    x.set_requires_grad();
    auto y = mul(x, x);
    REQUIRE_THROWS_WITH(y.backward(), Catch::Contains("scalar"));
    auto loss = sum(y);
    loss.backward();
    REQUIRE_THROWS_WITH(loss.backward(), Catch::Contains("already"));
}

TEST_CASE("backward is linear in the loss combination", "[tensor]") {
    Rng rng(11);
    auto xv = random_vector(rng, 6);
    const double a = 1.7, b = -0.6;

    auto grad_of = [&](const std::function<Tensor64(const Tensor64&)>& fn) {
        auto x = Tensor64::from_vector(xv, {6});
        x.set_requires_grad();
        auto l = fn(x);
        l.backward();
        return x.grads();
    };
    auto gf = grad_of([](const Tensor64& x) { return sum(mul(x, x)); });
    auto gg = grad_of([](const Tensor64& x) { return sum(sigmoid(x)); });
    auto gc = grad_of([&](const Tensor64& x) {
        return add(scale(sum(mul(x, x)), a), scale(sum(sigmoid(x)), b));
    });
    for (std::size_t i = 0; i < gc.size(); ++i)
        REQUIRE(gc[i] == Approx(a * gf[i] + b * gg[i]).margin(1e-6));
}

TEST_CASE("finite differences: exact, smooth, and constant cases", "[tensor]") {
    // sum of squares at [1,2,3]: derivatives exactly representable
    {
        auto point = Tensor64::from_vector({1, 2, 3}, {3});
        std::function<Tensor64(const Tensor64&)> fn = [](const Tensor64& x) { return sum(mul(x, x)); };
        REQUIRE(finite_diff_check<double>(fn, point, 1e-5) < 1e-8);
    }
    // conv1d + relu at a random point away from kinks
    {
        Rng rng(37);
        auto point = Tensor64::from_vector(random_vector(rng, 10, 0.2, 1.0), {10});
        std::function<Tensor64(const Tensor64&)> fn = [](const Tensor64& x) {
            auto xr = reshape(x, {1, 5, 2});
            auto w = Tensor64::from_vector({0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.6, -0.1, 0.25, -0.35, 0.15, 0.45},
                                           {3, 2, 2});
            auto b = Tensor64::from_vector({0.1, -0.2}, {2});
            return sum(relu(conv1d(xr, w, b, 1)));
        };
        REQUIRE(finite_diff_check<double>(fn, point, 1e-5) < 1e-4);
    }
    // constant function: both gradients vanish
    {
        auto point = Tensor64::from_vector({0.3, -0.7}, {2});
        std::function<Tensor64(const Tensor64&)> fn = [](const Tensor64& x) {
            return sum(mul(x, Tensor64::zeros({2})));
        };
        REQUIRE(finite_diff_check<double>(fn, point, 1e-5) <= 1e-8);
    }
}

TEST_CASE("structural ops route gradients faithfully", "[tensor]") {
    Rng rng(41);
    auto point = Tensor64::from_vector(random_vector(rng, 12), {3, 4});
    std::function<Tensor64(const Tensor64&)> fn = [](const Tensor64& x) {
        auto left = col_slice(x, 0, 2);
        auto right = col_slice(x, 2, 4);
        auto cat = col_concat<double>({right, left});
        auto t = transpose(cat);
        auto s = stack<double>({element(t, 0), element(t, 5), sum(row_sum(cat))});
        return sum(mul(s, s));
    };
    REQUIRE(finite_diff_check<double>(fn, point, 1e-5) < 1e-6);

    std::function<Tensor64(const Tensor64&)> fn2 = [](const Tensor64& x) {
        auto b0 = batch_slice(reshape(x, {3, 2, 2}), 1);
        auto col = row_sum(b0);
        return sum(rowwise_div(rowwise_add(b0, col), Tensor64::from_vector({2.0, 3.0}, {2, 1})));
    };
    REQUIRE(finite_diff_check<double>(fn2, point, 1e-5) < 1e-6);
}

TEST_CASE("adam: zero grad, first-step magnitude, quadratic descent", "[tensor]") {
    // zero gradient leaves parameters unchanged
    {
        Parameter<double> p("w", Tensor64::from_vector({1.0, -2.0}, {2}));
        p.tensor.zero_grad();
        std::vector<Parameter<double>> params;
        params.push_back(std::move(p));
        adam_step(params);
        REQUIRE(params[0].tensor.values() == std::vector<double>{1.0, -2.0});
    }
    // single scalar, g=1 at t=1: the bias corrections cancel, update ~ -lr
    {
        AdamConfig cfg;
        std::vector<double> w{0.0}, m1{0.0}, m2{0.0};
        std::vector<double> g{1.0};
        std::int64_t t = 0;
        adam_step<double>(std::span<double>(w), std::span<const double>(g), m1, m2, t, cfg);
        REQUIRE(w[0] == Approx(-cfg.lr).epsilon(1e-6));
    }
    // f(w) = w^2 from w0=1: |w| strictly decreases over 10 steps
    {
        AdamConfig cfg;
        cfg.lr = 0.05;
        std::vector<double> w{1.0}, m1{0.0}, m2{0.0};
        std::int64_t t = 0;
        double prev = std::abs(w[0]);
        for (int i = 0; i < 10; ++i) {
            std::vector<double> g{2.0 * w[0]};
            adam_step<double>(std::span<double>(w), std::span<const double>(g), m1, m2, t, cfg);
            REQUIRE(std::abs(w[0]) < prev);
            prev = std::abs(w[0]);
        }
    }
    // shape mismatch between param and grad
    {
        std::vector<double> w{1.0, 2.0}, m1{0.0, 0.0}, m2{0.0, 0.0}, g{1.0};
        std::int64_t t = 0;
        REQUIRE_THROWS_WITH(
            adam_step<double>(std::span<double>(w), std::span<const double>(g), m1, m2, t, AdamConfig{}),
            Catch::Contains("mismatch"));
    }
}

TEST_CASE("elementwise gradient checks across the op set", "[tensor]") {
    for (const auto& r : selftest::run_gradient_checks()) {
        INFO(r.name << ": " << r.detail);
        REQUIRE(r.pass);
    }
}

TEST_CASE("forward results are bit-identical across repeated runs", "[tensor]") {
    auto run = [] {
        Rng rng(99);
        std::vector<float> v(48);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
        auto x = Tensor::from_vector(v, {2, 6, 4});
        auto g = Tensor::full({4}, 1.0f);
        auto o = Tensor::zeros({4});
        auto w = Tensor::from_vector(std::vector<float>(3 * 4 * 4, 0.25f), {3, 4, 4});
        auto b = Tensor::zeros({4});
        return global_avg_pool(conv1d(relu(layer_norm(x, g, o)), w, b, 2)).values();
    };
    auto a = run(), b = run();
    REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("shape contracts: conv, norm, pool preserve contracted dims", "[tensor]") {
    Rng rng(1);
    auto x = Tensor64::from_vector(random_vector(rng, 2 * 9 * 3), {2, 9, 3});
    auto w = Tensor64::from_vector(random_vector(rng, 5 * 3 * 4), {5, 3, 4});
    auto b = Tensor64::zeros({4});
    auto y = conv1d(x, w, b, 2);
    REQUIRE(y.shape() == Shape{2, 9, 4});
    auto g = Tensor64::full({3}, 1.0);
    auto o = Tensor64::zeros({3});
    REQUIRE(layer_norm(x, g, o).shape() == x.shape());
    REQUIRE(global_avg_pool(x).shape() == Shape{2, 3});

    REQUIRE_THROWS_WITH(conv1d(x, Tensor64::zeros({4, 3, 4}), b, 1), Catch::Contains("odd"));
    REQUIRE_THROWS_WITH(conv1d(x, Tensor64::zeros({3, 5, 4}), b, 1), Catch::Contains("channels"));
}
