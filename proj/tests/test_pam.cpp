#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pampose/pam.hpp"
#include "support/oracles.hpp"

using namespace pampose;
using ag::Graph;
using ag::Tensor;

namespace {

// zero out every parameter of a pam block
void zero_params(Graph& g, const pam::PamParams& p) {
    auto clear = [&](Tensor t) {
        auto v = g.leaf_values(t);
        std::fill(v.begin(), v.end(), 0.0);
    };
    if (p.has_cap) {
        clear(p.cap_w1);
        clear(p.cap_b1);
        clear(p.cap_w2);
        clear(p.cap_b2);
    }
    for (const auto& [w, b] : p.gap_layers) {
        clear(w);
        clear(b);
    }
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

TEST_CASE("cap_forward with zero parameters gives zero logits") {
    Graph g;
    Rng rng(1);
    pam::PamConfig cfg;
    cfg.channels = 8;
    cfg.reduction_ratio = 4;
    pam::PamParams params = pam::init_params(g, cfg, rng, "pam");
    zero_params(g, params);
    g.recompute();
    Tensor f = g.constant({8, 5}, oracles::random_values(rng, 40));
    const auto logits = g.values(pam::cap_forward(g, f, params));
    REQUIRE(logits.size() == 8);
    for (double v : logits) CHECK(v == 0.0);
}

TEST_CASE("cap_forward with identity MLPs passes the pooled vector through") {
    Graph g;
    Rng rng(2);
    pam::PamConfig cfg;
    cfg.channels = 2;
    cfg.reduction_ratio = 1;
    pam::PamParams params = pam::init_params(g, cfg, rng, "pam");
    // identity weight matrices, zero biases
    auto set = [&](Tensor t, std::vector<double> v) {
        auto dst = g.leaf_values(t);
        std::copy(v.begin(), v.end(), dst.begin());
    };
    set(params.cap_w1, {1, 0, 0, 1});
    set(params.cap_b1, {0, 0});
    set(params.cap_w2, {1, 0, 0, 1});
    set(params.cap_b2, {0, 0});
    Tensor f = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto logits = g.values(pam::cap_forward(g, f, params));
    CHECK(logits[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(logits[1] == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("cap_forward matches a straight-line reimplementation") {
    Graph g;
    Rng rng(3);
    pam::PamConfig cfg;
    cfg.channels = 6;
    cfg.reduction_ratio = 2;
    pam::PamParams params = pam::init_params(g, cfg, rng, "pam");
    const auto fv = oracles::random_values(rng, 6 * 9);
    Tensor f = g.constant({6, 9}, fv);
    const auto got = g.values(pam::cap_forward(g, f, params));

    // pool -> dense -> relu -> dense, straight-line
    std::vector<double> pooled(6, 0.0);
    for (int c = 0; c < 6; ++c) {
        for (int j = 0; j < 9; ++j) pooled[c] += fv[static_cast<std::size_t>(c) * 9 + j];
        pooled[c] /= 9.0;
    }
    const auto w1 = g.values(params.cap_w1);
    const auto b1 = g.values(params.cap_b1);
    const auto w2 = g.values(params.cap_w2);
    const auto b2 = g.values(params.cap_b2);
    std::vector<double> hidden(3, 0.0);
    for (int i = 0; i < 3; ++i) {
        double acc = b1[i];
        for (int k = 0; k < 6; ++k) acc += w1[static_cast<std::size_t>(i) * 6 + k] * pooled[k];
        hidden[i] = std::max(0.0, acc);
    }
    for (int i = 0; i < 6; ++i) {
        double acc = b2[i];
        for (int k = 0; k < 3; ++k) acc += w2[static_cast<std::size_t>(i) * 3 + k] * hidden[k];
        CHECK(std::abs(got[static_cast<std::size_t>(i)] - acc) <= 1e-12);
    }
}

TEST_CASE("gap_forward zero params, single point, column independence") {
    Graph g;
    Rng rng(4);
    pam::PamConfig cfg;
    cfg.channels = 6;
    cfg.reduction_ratio = 3;
    pam::PamParams params = pam::init_params(g, cfg, rng, "pam");

    {
        pam::PamParams zeroed = params;
        zero_params(g, zeroed);
        g.recompute();
        Tensor f = g.constant({6, 4}, oracles::random_values(rng, 24));
        Tensor out = pam::gap_forward(g, f, zeroed);
        CHECK(g.shape(out) == ag::Shape{1, 4});
        for (double v : g.values(out)) CHECK(v == 0.0);
        // restore random params for the rest of the test
        Rng rng2(4);
        pam::PamConfig cfg2 = cfg;
        (void)cfg2;
    }

    Graph g2;
    Rng rng3(5);
    pam::PamParams p2 = pam::init_params(g2, cfg, rng3, "pam");
    const auto fv = oracles::random_values(rng3, 6 * 7);
    Tensor f = g2.constant({6, 7}, fv);
    const auto full = g2.values(pam::gap_forward(g2, f, p2));
    // pointwise convs cannot mix points: evaluate each column alone
    for (int j = 0; j < 7; ++j) {
        std::vector<double> col(6);
        for (int c = 0; c < 6; ++c) col[static_cast<std::size_t>(c)] = fv[static_cast<std::size_t>(c) * 7 + j];
        Tensor single = g2.constant({6, 1}, col);
        const auto one = g2.values(pam::gap_forward(g2, single, p2));
        CHECK(std::abs(one[0] - full[static_cast<std::size_t>(j)]) <= 1e-12);
    }
}

TEST_CASE("combine_paths: zeros give 0.5, saturation gives ~1, oracle match") {
    Graph g;
    Tensor cap0 = g.constant({3}, {0, 0, 0});
    Tensor gap0 = g.constant({1, 4}, {0, 0, 0, 0});
    for (double v : g.values(pam::combine_paths(g, cap0, gap0))) CHECK(v == 0.5);

    Tensor cap_hi = g.constant({3}, {50, 50, 50});
    for (double v : g.values(pam::combine_paths(g, cap_hi, gap0)))
        CHECK(std::abs(v - 1.0) < 1e-15);

    Rng rng(6);
    const auto cv = oracles::random_values(rng, 5, -3, 3);
    const auto gv = oracles::random_values(rng, 6, -3, 3);
    Tensor cap = g.constant({5}, cv);
    Tensor gap = g.constant({1, 6}, gv);
    const auto a = g.values(pam::combine_paths(g, cap, gap));
    for (int c = 0; c < 5; ++c)
        for (int n = 0; n < 6; ++n) {
            const double expect = stable_sigmoid(cv[static_cast<std::size_t>(c)] +
                                                 gv[static_cast<std::size_t>(n)]);
            CHECK(a[static_cast<std::size_t>(c) * 6 + n] == doctest::Approx(expect).epsilon(1e-15));
        }
}

TEST_CASE("apply_attention residual identity, doubling, elementwise oracle") {
    Graph g;
    Rng rng(7);
    const auto fv = oracles::random_values(rng, 12);
    Tensor f = g.constant({3, 4}, fv);

    Tensor a0 = g.constant({3, 4}, std::vector<double>(12, 0.0));
    const auto same = g.values(pam::apply_attention(g, f, a0));
    for (std::size_t i = 0; i < fv.size(); ++i) CHECK(same[i] == fv[i]);  // bit-exact

    Tensor a1 = g.constant({3, 4}, std::vector<double>(12, 1.0));
    const auto twice = g.values(pam::apply_attention(g, f, a1));
    for (std::size_t i = 0; i < fv.size(); ++i) CHECK(twice[i] == 2.0 * fv[i]);

    const auto av = oracles::random_values(rng, 12, 0.0, 1.0);
    Tensor a = g.constant({3, 4}, av);
    const auto out = g.values(pam::apply_attention(g, f, a));
    for (std::size_t i = 0; i < fv.size(); ++i)
        CHECK(std::abs(out[i] - fv[i] * (1.0 + av[i])) <= 1e-15);

    Tensor wrong = g.constant({4, 3}, std::vector<double>(12, 0.0));
    CHECK_THROWS_AS(pam::apply_attention(g, f, wrong), DimensionError);
}

TEST_CASE("pam_param_count hand count and boundaries") {
    pam::PamConfig cfg;
    cfg.channels = 128;
    cfg.reduction_ratio = 128;
    cfg.gap_conv_count = 3;
    CHECK(pam::cap_param_count(128, 128) == 385);
    CHECK(pam::gap_param_count(128, 128, 3) == 133);
    CHECK(pam::pam_param_count(cfg) == 518);

    std::int64_t prev = -1;
    for (int r : {4, 8, 16, 32, 64}) {
        pam::PamConfig c;
        c.channels = 128;
        c.reduction_ratio = r;
        const std::int64_t count = pam::pam_param_count(c);
        if (prev >= 0) CHECK(count < prev);
        prev = count;
    }
    // r = C is the minimum for that C
    pam::PamConfig cmax;
    cmax.channels = 128;
    cmax.reduction_ratio = 128;
    CHECK(pam::pam_param_count(cmax) < prev);
}

TEST_CASE("pam_param_count monotone for every divisor pair") {
    std::vector<int> divisors;
    for (int r = 1; r <= 64; ++r)
        if (64 % r == 0) divisors.push_back(r);
    for (std::size_t i = 0; i + 1 < divisors.size(); ++i) {
        pam::PamConfig a, b;
        a.channels = b.channels = 64;
        a.reduction_ratio = divisors[i];
        b.reduction_ratio = divisors[i + 1];
        CHECK(pam::pam_param_count(a) > pam::pam_param_count(b));
    }
}

TEST_CASE("pam config validation") {
    pam::PamConfig bad;
    bad.channels = 10;
    bad.reduction_ratio = 4;  // does not divide
    CHECK_THROWS_AS(pam::validate(bad), ValidationError);
    bad.channels = 8;
    bad.reduction_ratio = 4;
    bad.gap_conv_count = 1;
    CHECK_THROWS_AS(pam::validate(bad), ValidationError);
}

TEST_CASE("attention map strictly inside (0,1) and residual bound") {
    Rng rng(8);
    pam::PamConfig cfg;
    cfg.channels = 8;
    cfg.reduction_ratio = 2;
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        pam::PamParams params = pam::init_params(g, cfg, rng, "pam");
        const auto fv = oracles::random_values(rng, 8 * 6, -4.0, 4.0);
        Tensor f = g.constant({8, 6}, fv);
        Tensor cap = pam::cap_forward(g, f, params);
        Tensor gap = pam::gap_forward(g, f, params);
        Tensor a = pam::combine_paths(g, cap, gap);
        for (double v : g.values(a)) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        const auto fp = g.values(pam::apply_attention(g, f, a));
        for (std::size_t i = 0; i < fv.size(); ++i) {
            CHECK(std::abs(fp[i]) <= 2.0 * std::abs(fv[i]));
        }
    }
}

TEST_CASE("gap permutation equivariance and cap permutation invariance are exact") {
    Rng rng(9);
    pam::PamConfig cfg;
    cfg.channels = 6;
    cfg.reduction_ratio = 2;
    Graph g;
    pam::PamParams params = pam::init_params(g, cfg, rng, "pam");
    const int n = 9;
    const auto fv = oracles::random_values(rng, 6 * n);
    // random permutation
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)))]);
    std::vector<double> fp(fv.size());
    for (int c = 0; c < 6; ++c)
        for (int j = 0; j < n; ++j)
            fp[static_cast<std::size_t>(c) * n + j] =
                fv[static_cast<std::size_t>(c) * n + perm[static_cast<std::size_t>(j)]];

    Tensor f = g.constant({6, n}, fv);
    Tensor f2 = g.constant({6, n}, fp);
    const auto gap1 = g.values(pam::gap_forward(g, f, params));
    const auto gap2 = g.values(pam::gap_forward(g, f2, params));
    for (int j = 0; j < n; ++j)
        CHECK(gap2[static_cast<std::size_t>(j)] == gap1[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);

    const auto cap1 = g.values(pam::cap_forward(g, f, params));
    const auto cap2 = g.values(pam::cap_forward(g, f2, params));
    for (int c = 0; c < 6; ++c)
        CHECK(cap1[static_cast<std::size_t>(c)] ==
              doctest::Approx(cap2[static_cast<std::size_t>(c)]).epsilon(1e-15));
}

TEST_CASE("full attention block gradient check") {
    Rng rng(10);
    pam::PamConfig cfg;
    cfg.channels = 4;
    cfg.reduction_ratio = 2;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Graph g;
        Rng prng(seed * 13 + 5);
        pam::PamParams params = pam::init_params(g, cfg, prng, "pam");
        Tensor f = g.parameter({4, 5}, oracles::random_values(prng, 20), "f");
        Tensor out = pam::pam_apply(g, f, cfg, params);
        Tensor loss = g.mean(g.sigmoid(out));
        std::vector<Tensor> probes{f, params.cap_w1, params.cap_b1, params.cap_w2, params.cap_b2};
        for (const auto& [w, b] : params.gap_layers) {
            probes.push_back(w);
            probes.push_back(b);
        }
        const double err = oracles::max_fd_rel_err(g, loss, probes);
        INFO("seed " << seed << " err " << err);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("pam_apply with both paths disabled returns the input tensor") {
    Graph g;
    Rng rng(11);
    pam::PamConfig cfg;
    cfg.channels = 4;
    cfg.reduction_ratio = 2;
    cfg.enable_cap = false;
    cfg.enable_gap = false;
    pam::PamParams params;  // none allocated
    Tensor f = g.constant({4, 3}, oracles::random_values(rng, 12));
    Tensor out = pam::pam_apply(g, f, cfg, params);
    CHECK(out.id == f.id);
    CHECK(pam::pam_param_count(cfg) == 0);
}
