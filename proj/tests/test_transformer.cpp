// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <random>

#include "tpl/error.hpp"
#include "tpl/strategies.hpp"
#include "tpl/transformer.hpp"

using namespace tpl;
using I = std::vector<std::size_t>;

namespace {

ModelConfig small_model(std::uint64_t seed = 1) {
    return ModelConfig{3, 16, 2, 32, seed};
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::io;
}

// Keeps the first `retain` alive visual tokens.
StrategyHook keep_first_hook() {
    return [](const StageContext& ctx) {
        StageDecision d;
        std::size_t kept = 0;
        for (std::size_t pos : ctx.state.index_map) {
            if (!ctx.layout.is_visual(pos)) {
                d.retained.push_back(pos);
            } else if (kept < ctx.stage.retain) {
                d.retained.push_back(pos);
                ++kept;
            }
        }
        return d;
    };
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("model config") {
    CHECK(ModelConfig{1, 8, 2, 8, 0}.head_dim() == 4);
    CHECK(kind_of([] { ModelConfig{1, 8, 3, 8, 0}.check(); }) == ErrorKind::config);
    CHECK(kind_of([] { ModelConfig{0, 8, 2, 8, 0}.check(); }) == ErrorKind::config);
}

TEST_CASE("weights are deterministic per seed") {
    const ToyTransformer a(small_model(7)), b(small_model(7)), c(small_model(8));
    CHECK(a.weight_checksum(0) == b.weight_checksum(0));
    CHECK(a.weight_checksum(2) == b.weight_checksum(2));
    CHECK(a.weight_checksum(0) != c.weight_checksum(0));
    CHECK(a.weight_checksum(0) != a.weight_checksum(1));
    CHECK(init_model(small_model(7)).weight_checksum(1) == a.weight_checksum(1));
}

TEST_CASE("compress_sequence") {
    const auto lay = TokenLayout{6, 1, 5, 2, 2};
    ForwardState st;
    st.x = random_embeddings(6, 3, 1);
    st.index_map = {0, 1, 2, 3, 4, 5};

    SUBCASE("retaining everything is the identity") {
        const auto out = compress_sequence(st, st.index_map, lay);
        CHECK(out.index_map == st.index_map);
        CHECK(same_bits(out.x, st.x));
    }
    SUBCASE("hand gather") {
        const I keep{0, 1, 3, 5};
        const auto out = compress_sequence(st, keep, lay);
        CHECK(out.index_map == keep);
        REQUIRE(out.x.rows() == 4);
        CHECK(same_bits(out.x.row(2), st.x.row(3)));
        CHECK(same_bits(out.x.row(3), st.x.row(5)));
    }
    SUBCASE("dropping text is a contract error") {
        CHECK(kind_of([&] { compress_sequence(st, I{1, 2, 3, 4, 5}, lay); }) ==
              ErrorKind::contract);
        CHECK(kind_of([&] { compress_sequence(st, I{0, 1, 2}, lay); }) == ErrorKind::contract);
    }
    SUBCASE("dead index") {
        const auto mid = compress_sequence(st, I{0, 1, 5}, lay);
        CHECK(kind_of([&] { compress_sequence(mid, I{0, 1, 2, 5}, lay); }) == ErrorKind::index);
    }
}

TEST_CASE("compression composes") {
    std::mt19937_64 gen(3);
    const auto lay = TokenLayout::make(2, 3, 4, 2);
    for (int trial = 0; trial < 200; ++trial) {
        ForwardState st;
        st.x = random_embeddings(lay.seq_len, 4, gen());
        st.index_map.resize(lay.seq_len);
        for (std::size_t i = 0; i < lay.seq_len; ++i) st.index_map[i] = i;
        I a, b;
        for (std::size_t i = 0; i < lay.seq_len; ++i) {
            if (!lay.is_visual(i)) {
                a.push_back(i);
                b.push_back(i);
            } else if (gen() % 2) {
                a.push_back(i);
                if (gen() % 2) b.push_back(i);
            }
        }
        const auto twice = compress_sequence(compress_sequence(st, a, lay), b, lay);
        const auto once = compress_sequence(st, b, lay);
        CHECK(twice.index_map == once.index_map);
        CHECK(same_bits(twice.x, once.x));
    }
}

TEST_CASE("forward shapes") {
    const ToyTransformer model(small_model());
    const auto lay = TokenLayout::make(2, 4, 4, 3);  // L = 21, V = 16
    const Matrix emb = random_embeddings(lay.seq_len, 16, 5);

    SUBCASE("empty schedule") {
        const auto r = forward(model, emb, lay, {}, keep_all_hook());
        CHECK(r.output.rows() == 21);
        CHECK(r.output.cols() == 16);
        CHECK(r.trace.num_layers == 3);
        CHECK(r.tokens_per_layer == I{21, 21, 21});
        CHECK(validate_trace(r.trace).empty());
    }
    SUBCASE("one stage") {
        const auto r = forward(model, emb, lay, PruneSchedule::parse("1:6"), keep_first_hook());
        CHECK(r.output.rows() == 21 - (16 - 6));
        CHECK(r.tokens_per_layer == I{21, 11, 11});
        CHECK(r.index_map.size() == 11);
    }
    SUBCASE("two stages") {
        const auto r = forward(model, emb, lay, PruneSchedule::parse("1:8,2:3"), keep_first_hook());
        CHECK(r.tokens_per_layer == I{21, 13, 8});
    }
    SUBCASE("hook breaking the stage count") {
        auto bad = [](const StageContext& ctx) { return StageDecision{ctx.state.index_map, {}}; };
        CHECK(kind_of([&] { forward(model, emb, lay, PruneSchedule::parse("1:6"), bad); }) ==
              ErrorKind::contract);
    }
    SUBCASE("hook dropping text") {
        auto bad = [](const StageContext& ctx) {
            I keep(ctx.state.index_map.begin() + 1, ctx.state.index_map.end());
            return StageDecision{keep, {}};
        };
        CHECK(kind_of([&] { forward(model, emb, lay, PruneSchedule::parse("1:16"), bad); }) ==
              ErrorKind::contract);
    }
    SUBCASE("bad schedules") {
        CHECK(kind_of([&] { forward(model, emb, lay, PruneSchedule::parse("3:4"), keep_all_hook()); }) ==
              ErrorKind::config);
        CHECK(kind_of([&] { forward(model, emb, lay, PruneSchedule::parse("1:17"), keep_all_hook()); }) ==
              ErrorKind::config);
    }
}

TEST_CASE("two-stage 576 -> 144 -> 64 schedule") {
    const ToyTransformer model(ModelConfig{3, 16, 2, 32, 2});
    const auto lay = TokenLayout::make(5, 24, 24, 11);
    const Matrix emb = random_embeddings(lay.seq_len, 16, 9);
    const auto r = forward(model, emb, lay, PruneSchedule::parse("1:144,2:64"), keep_first_hook());
    CHECK(r.output.rows() == static_cast<Eigen::Index>(lay.seq_len - 512));
}

TEST_CASE("all-retained hook is bit-identical to no schedule") {
    const ToyTransformer model(small_model(4));
    const auto lay = TokenLayout::make(3, 5, 5, 4);
    const Matrix emb = random_embeddings(lay.seq_len, 16, 6);
    const auto plain = forward(model, emb, lay, {}, keep_all_hook());
    const auto kept = forward(model, emb, lay, PruneSchedule::parse("1:25,2:25"), keep_all_hook());
    CHECK(same_bits(plain.output, kept.output));
    CHECK(plain.trace == kept.trace);
    const auto mat = forward(model, emb, lay, PruneSchedule::parse("1:25:m,2:25:m"), keep_all_hook());
    CHECK(mat.materialized);
    CHECK(same_bits(plain.output, mat.output));
}

TEST_CASE("captured rows are causal, normalized and zero where pruned") {
    const ToyTransformer model(small_model(5));
    const auto lay = TokenLayout::make(2, 3, 3, 3);
    const Matrix emb = random_embeddings(lay.seq_len, 16, 7);
    for (auto reduction : {QueryReduction::last_token, QueryReduction::mean_all_rows}) {
        ForwardOptions opts;
        opts.capture = reduction;
        opts.capture_hidden_layer = 2;
        const auto r = forward(model, emb, lay, PruneSchedule::parse("1:4"), keep_first_hook(), opts);
        CHECK(validate_trace(r.trace).empty());
        for (std::size_t layer = 0; layer < 3; ++layer) {
            const auto vis = r.trace.last_visual_row(layer);
            for (std::size_t i = lay.image_end; i < lay.seq_len; ++i) CHECK(vis[i] == 0.0f);
        }
        // Layers 1 and 2 ran without the last five visual tokens.
        const auto text = r.trace.last_text_row(2);
        for (std::size_t v = 4; v < 9; ++v) CHECK(text[lay.image_start + v] == 0.0f);
        const auto hs = r.trace.hidden->row(lay.image_start + 8);
        CHECK(std::all_of(hs.begin(), hs.end(), [](float x) { return x == 0.0f; }));
    }
}

TEST_CASE("stage at layer 0 cannot prune every visual token with an empty prefix") {
    const ToyTransformer model(small_model());
    const auto lay = TokenLayout::make(0, 2, 2, 2);
    const Matrix emb = random_embeddings(lay.seq_len, 16, 1);
    CHECK(kind_of([&] { forward(model, emb, lay, PruneSchedule::parse("0:0"), keep_first_hook()); }) ==
          ErrorKind::contract);
}

TEST_CASE("strategy hook drives a live forward") {
    const ToyTransformer model(small_model(6));
    const auto lay = TokenLayout::make(2, 4, 4, 3);
    const Matrix emb = random_embeddings(lay.seq_len, 16, 2);
    PruneConfig cfg;
    cfg.strategy = Strategy::fastv;
    const auto r = forward(model, emb, lay, PruneSchedule::parse("1:8,2:4"), make_strategy_hook(cfg));
    CHECK(r.tokens_per_layer == I{21, 13, 9});

    // The first stage keeps the top-8 of the layer-0 guidance row.
    const auto plain = forward(model, emb, lay, {}, keep_all_hook());
    ScoreVector s0(plain.trace.last_text_row(0).begin() + 2, plain.trace.last_text_row(0).begin() + 18);
    const auto top = numeric::topk_stable(s0, 8);
    const auto first = forward(model, emb, lay, PruneSchedule::parse("1:8"), make_strategy_hook(cfg));
    I visual;
    for (std::size_t pos : first.index_map) {
        if (lay.is_visual(pos)) visual.push_back(pos - 2);
    }
    CHECK(visual == top);

    // A stage after every visual token is gone keeps only text.
    for (Strategy s : {Strategy::fastv, Strategy::alpha_balance, Strategy::random}) {
        cfg.strategy = s;
        const auto empty = forward(model, emb, lay, PruneSchedule::parse("1:0,2:0"), make_strategy_hook(cfg));
        CHECK(empty.tokens_per_layer == I{21, 5, 5});
    }

    cfg.strategy = Strategy::window_fastv;
    CHECK(kind_of([&] {
              forward(model, emb, lay, PruneSchedule::parse("1:8,2:4"), make_strategy_hook(cfg));
          }) == ErrorKind::config);
}

TEST_CASE("latency harness") {
    const ToyTransformer model(ModelConfig{});
    const auto lay = TokenLayout::make(8, 24, 24, 24);
    const Matrix emb = random_embeddings(lay.seq_len, 256, 3);
    PruneConfig cfg;
    cfg.strategy = Strategy::fastv;
    const auto hook = make_strategy_hook(cfg);

    CHECK(kind_of([&] { time_forward(model, emb, lay, {}, hook, 1); }) == ErrorKind::precondition);

    const auto full = time_forward(model, emb, lay, {}, hook, 5);
    const auto pruned = time_forward(model, emb, lay, PruneSchedule::parse("1:144"), hook, 5);
    CHECK(pruned.median_ms < full.median_ms);
    CHECK(full.samples_ms.size() == 5);
    CHECK(full.p10_ms <= full.median_ms);
    CHECK(full.median_ms <= full.p90_ms);

    const auto again = time_forward(model, emb, lay, PruneSchedule::parse("1:144"), hook, 3);
    CHECK(again.tokens_per_layer == pruned.tokens_per_layer);
}
