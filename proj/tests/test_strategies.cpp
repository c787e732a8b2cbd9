// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tpl/error.hpp"
#include "tpl/strategies.hpp"

using namespace tpl;
using I = std::vector<std::size_t>;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::io;
}

I range(std::size_t lo, std::size_t hi) {
    I out;
    for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
    return out;
}

ScoreVector increasing(std::size_t n) {
    ScoreVector s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = 0.001 * static_cast<double>(i + 1);
    return s;
}

AttentionTrace synth(BiasKind kind, double strength, double noise, std::uint64_t seed,
                     std::size_t hidden_dim = 16) {
    SynthConfig c;
    c.layout = TokenLayout::make(3, 6, 6, 5);
    c.bias_kind = kind;
    c.bias_strength = strength;
    c.noise_sigma = noise;
    c.seed = seed;
    c.num_layers = 2;
    c.hidden_dim = hidden_dim;
    c.hidden_layer = 2;
    return synthesize_trace(c);
}

// Checks the PruneResult invariants: all text kept, R visual, ascending.
void check_invariants(const PruneResult& r, std::size_t R) {
    CHECK(std::is_sorted(r.retained.begin(), r.retained.end()));
    CHECK(std::adjacent_find(r.retained.begin(), r.retained.end()) == r.retained.end());
    CHECK(r.visual_retained().size() == R);
    CHECK(r.retained.size() == r.layout.text_count() + R);
}

}  // namespace

TEST_CASE("fastv_scores") {
    const auto uniform = synth(BiasKind::uniform, 0.0, 0.0, 1);
    const auto s = fastv_scores(uniform, 2, Guidance::last_text);
    CHECK(s.size() == 36);
    CHECK(std::all_of(s.begin(), s.end(), [&](double v) { return v == s.front(); }));

    const auto mono = synth(BiasKind::monotone_positional, 2.0, 0.0, 1);
    const auto m = fastv_scores(mono, 2, Guidance::last_text);
    for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i] > m[i - 1]);

    // Flipping the guidance changes the scores exactly when the rows differ.
    const auto vis = fastv_scores(mono, 2, Guidance::last_visual);
    const auto text_row = mono.last_text_row(1).subspan(3, 36);
    const auto vis_row = mono.last_visual_row(1).subspan(3, 36);
    CHECK((vis != m) == !std::equal(text_row.begin(), text_row.end(), vis_row.begin()));

    CHECK(kind_of([&] { fastv_scores(mono, 0, Guidance::last_text); }) == ErrorKind::data);
    CHECK(kind_of([&] { fastv_scores(mono, 3, Guidance::last_text); }) == ErrorKind::data);
}

TEST_CASE("select_top examples") {
    const auto lay = TokenLayout::make(5, 24, 24, 11);
    const auto s = increasing(576);
    CHECK(select_top(s, lay, 576).visual_retained() == range(0, 576));
    CHECK(select_top(s, lay, 144).visual_retained() == range(432, 576));
    const auto none = select_top(s, lay, 0);
    CHECK(none.visual_retained().empty());
    CHECK(none.retained == non_visual_positions(lay));
    CHECK(kind_of([&] { select_top(s, lay, 577); }) == ErrorKind::bounds);
    CHECK(kind_of([&] { select_top(ScoreVector(3), lay, 1); }) == ErrorKind::shape);
}

TEST_CASE("select_bottom examples") {
    const auto lay = TokenLayout::make(5, 24, 24, 11);
    const auto s = increasing(576);
    CHECK(select_bottom(s, lay, 144).visual_retained() == range(0, 144));
    CHECK(select_bottom(s, lay, 576).visual_retained() == range(0, 576));
}

TEST_CASE("top(V-R) and bottom(R) partition the visual span") {
    std::mt19937_64 gen(31);
    const auto lay = TokenLayout::make(2, 5, 7, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = oracle::distinct_scores(35, gen);
        const std::size_t R = gen() % 36;
        auto top = select_top(s, lay, 35 - R).visual_retained();
        const auto bottom = select_bottom(s, lay, R).visual_retained();
        top.insert(top.end(), bottom.begin(), bottom.end());
        std::sort(top.begin(), top.end());
        CHECK(top == range(0, 35));
    }
}

TEST_CASE("window quotas and selection") {
    SUBCASE("4x4 grid, 2x2 windows, R=4: one per window") {
        const auto lay = TokenLayout::make(1, 4, 4, 1);
        std::mt19937_64 gen(2);
        const auto s = oracle::distinct_scores(16, gen);
        const auto r = select_window(s, lay, {2, 2}, 4);
        const auto kept = r.visual_retained();
        for (const auto& t : tile_grid(4, 4, 2, 2)) {
            std::size_t n = 0;
            for (std::size_t m : t.members(4)) n += std::count(kept.begin(), kept.end(), m);
            CHECK(n == 1);
        }
    }
    SUBCASE("24x24 grid, 4x4 windows, R=144: four per window") {
        const auto lay = TokenLayout::make(5, 24, 24, 11);
        const auto q = window_quotas(lay, {4, 4}, 144);
        CHECK(q.size() == 36);
        CHECK(std::all_of(q.begin(), q.end(), [](std::size_t v) { return v == 4; }));
    }
    SUBCASE("uniform scores keep the lowest indices of each window") {
        const auto lay = TokenLayout::make(0, 4, 4, 1);
        const auto r = select_window(ScoreVector(16, 1.0), lay, {2, 2}, 4);
        CHECK(r.visual_retained() == I{0, 2, 8, 10});
    }
    SUBCASE("edge windows and remainders") {
        const auto lay = TokenLayout::make(0, 5, 5, 1);
        const auto q = window_quotas(lay, {2, 2}, 7);
        // floor(7*4/25)=1 for full windows, floor(7*2/25)=0 on edges, floor(7/25)=0 corner.
        CHECK(q == I{2, 2, 1, 1, 1, 0, 0, 0, 0});
        std::size_t total = 0;
        for (auto v : q) total += v;
        CHECK(total == 7);
    }
    SUBCASE("window larger than the grid") {
        const auto lay = TokenLayout::make(0, 2, 2, 1);
        CHECK(kind_of([&] { window_quotas(lay, {3, 1}, 1); }) == ErrorKind::config);
    }
}

TEST_CASE("pooling") {
    SUBCASE("single 2x2 window keeps the largest L1 norm") {
        const auto lay = TokenLayout::make(0, 2, 2, 1);
        const std::vector<float> h{1, 0, 5, 0, 2, 0, -3, 0, 0, 0};  // dim 2, rows 5
        const auto r = select_pooling(HiddenView{h, 5, 2}, lay, 2);
        CHECK(r.visual_retained() == I{1});
    }
    SUBCASE("24x24 grid with a=2 keeps 144") {
        const auto lay = TokenLayout::make(0, 24, 24, 1);
        CHECK(pooled_count(lay, 2) == 144);
        const std::vector<float> h(lay.seq_len * 3, 1.0f);
        const auto r = select_pooling(HiddenView{h, lay.seq_len, 3}, lay, 2);
        CHECK(r.visual_retained().size() == 144);
        // Equal norms keep the lowest index per window.
        CHECK(r.visual_retained()[0] == 0);
        CHECK(r.visual_retained()[1] == 2);
        CHECK(r.visual_retained()[12] == 48);
    }
}

TEST_CASE("random selection") {
    const auto lay = TokenLayout::make(1, 4, 4, 1);
    CHECK(select_random(lay, 5, 9).retained == select_random(lay, 5, 9).retained);
    CHECK(select_random(lay, 16, 9).visual_retained() == range(0, 16));

    std::vector<std::size_t> hits(16, 0);
    const std::size_t seeds = 10000;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        for (std::size_t v : select_random(lay, 4, seed).visual_retained()) ++hits[v];
    }
    for (std::size_t h : hits) {
        const double f = static_cast<double>(h) / seeds;
        CHECK(f >= 0.2);
        CHECK(f <= 0.3);
    }
}

TEST_CASE("alpha_scores") {
    // Hand example: attention [0.1, 0.3], similarity to the reference [0.9, 0.1].
    const auto lay = TokenLayout{3, 0, 2, 1, 2};
    const double c1 = 0.9, c2 = 0.1;
    const std::vector<float> h{static_cast<float>(c1), static_cast<float>(std::sqrt(1 - c1 * c1)),
                               static_cast<float>(c2), static_cast<float>(std::sqrt(1 - c2 * c2)),
                               1.0f, 0.0f};
    const auto s = alpha_scores({0.1, 0.3}, HiddenView{h, 3, 2}, lay, 2, 0.5);
    CHECK(s[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(kind_of([&] { alpha_scores({0.1, 0.3}, HiddenView{h, 3, 2}, lay, 2, 1.5); }) ==
          ErrorKind::config);
}

TEST_CASE("alpha endpoints reproduce the pure rankings") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto t = synth(BiasKind::monotone_positional, 1.0, 1.0, seed);
        const auto att = fastv_scores(t, 2, Guidance::last_text);
        const auto hv = HiddenView::of(*t.hidden, t.layout.seq_len);
        const auto a1 = alpha_scores(att, hv, t.layout, t.layout.seq_len - 1, 1.0);
        CHECK(oracle::ranks(a1) == oracle::ranks(att));
        ScoreVector neg_sim(att.size());
        for (std::size_t v = 0; v < att.size(); ++v) {
            neg_sim[v] = -numeric::cosine_similarity(hv.row(t.layout.image_start + v),
                                                     hv.row(t.layout.seq_len - 1));
        }
        const auto a0 = alpha_scores(att, hv, t.layout, t.layout.seq_len - 1, 0.0);
        CHECK(oracle::ranks(a0) == oracle::ranks(neg_sim));
    }
}

TEST_CASE("selection matches brute force on small grids") {
    std::mt19937_64 gen(41);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t h = 1 + gen() % 3, w = 1 + gen() % 4;
        const std::size_t V = h * w;
        const auto lay = TokenLayout::make(gen() % 3, h, w, gen() % 3);
        const auto s = oracle::distinct_scores(V, gen);
        const std::size_t R = gen() % (V + 1);
        CHECK(select_top(s, lay, R).visual_retained() == *oracle::brute_top(s, R));
        CHECK(select_bottom(s, lay, R).visual_retained() == *oracle::brute_bottom(s, R));
        const std::size_t th = 1 + gen() % h, tw = 1 + gen() % w;
        CHECK(select_window(s, lay, {th, tw}, R).visual_retained() ==
              *oracle::brute_window(s, h, w, th, tw, R));
    }
}

TEST_CASE("selection is scale invariant") {
    std::mt19937_64 gen(42);
    const auto lay = TokenLayout::make(1, 6, 6, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = oracle::distinct_scores(36, gen);
        ScoreVector scaled = s;
        const double c = 0.01 + static_cast<double>(gen() % 1000);
        for (double& v : scaled) v *= c;
        const std::size_t R = gen() % 37;
        CHECK(select_top(s, lay, R).retained == select_top(scaled, lay, R).retained);
        CHECK(select_bottom(s, lay, R).retained == select_bottom(scaled, lay, R).retained);
        CHECK(select_window(s, lay, {4, 4}, R).retained ==
              select_window(scaled, lay, {4, 4}, R).retained);
    }
}

TEST_CASE("prune composes the pieces") {
    const auto t = synth(BiasKind::monotone_positional, 2.0, 1.0, 5);
    PruneConfig c;
    c.retain = 9;
    c.strategy = Strategy::fastv;
    const auto scores = fastv_scores(t, 2, Guidance::last_text);
    CHECK(prune(t, c).retained == select_top(scores, t.layout, 9).retained);
    c.strategy = Strategy::reverse_fastv;
    CHECK(prune(t, c).retained == select_bottom(scores, t.layout, 9).retained);
    c.strategy = Strategy::window_fastv;
    c.window = {3, 3};
    CHECK(prune(t, c).retained == select_window(scores, t.layout, {3, 3}, 9).retained);
    c.strategy = Strategy::pooling;
    c.retain = 0;
    const auto pooled = prune(t, c);
    CHECK(pooled.config.retain == 9);
    c.retain = 10;
    CHECK(kind_of([&] { prune(t, c); }) == ErrorKind::config);
    c.strategy = Strategy::alpha_balance;
    c.retain = 9;
    c.alpha = 1.5;
    CHECK(kind_of([&] { prune(t, c); }) == ErrorKind::config);

    c.alpha = 0.5;
    c.layer = 1;  // hidden states were captured for layer 2
    CHECK(kind_of([&] { prune(t, c); }) == ErrorKind::config);
    c.layer = 3;
    CHECK(kind_of([&] { prune(t, c); }) == ErrorKind::config);

    const auto bare = synth(BiasKind::uniform, 0.0, 1.0, 5, 0);
    c.layer = 2;
    CHECK(kind_of([&] { prune(bare, c); }) == ErrorKind::config);
}

TEST_CASE("every strategy keeps all text and exactly R visual tokens, deterministically") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto t = synth(BiasKind::blocked, 2.0, 1.0, seed);
        for (auto s : {Strategy::random, Strategy::pooling, Strategy::fastv,
                       Strategy::reverse_fastv, Strategy::window_fastv, Strategy::alpha_balance}) {
            PruneConfig c;
            c.strategy = s;
            c.retain = s == Strategy::pooling ? 0 : seed % 37;
            c.seed = seed;
            const auto r = prune(t, c);
            check_invariants(r, s == Strategy::pooling ? 9 : seed % 37);
            CHECK(prune(t, c).retained == r.retained);
        }
    }
}

TEST_CASE("name parsing") {
    CHECK(parse_strategy("fastv_vis") == Strategy::fastv);
    CHECK(parse_strategy("window_fastv") == Strategy::window_fastv);
    CHECK(parse_guidance("last_visual") == Guidance::last_visual);
    CHECK(kind_of([] { parse_strategy("magic"); }) == ErrorKind::config);
}
