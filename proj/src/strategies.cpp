// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpl/error.hpp"
#include "tpl/rng.hpp"

namespace tpl {

namespace {

const char* const kModule = "strategies";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

PruneResult make_result(const TokenLayout& layout, const std::vector<std::size_t>& visual_local,
                        std::optional<ScoreVector> scores) {
    PruneResult r;
    r.layout = layout;
    r.retained.reserve(layout.text_count() + visual_local.size());
    for (std::size_t i = 0; i < layout.image_start; ++i) r.retained.push_back(i);
    for (std::size_t v : visual_local) r.retained.push_back(layout.image_start + v);
    for (std::size_t i = layout.image_end; i < layout.seq_len; ++i) r.retained.push_back(i);
    r.visual_scores = std::move(scores);
    return r;
}

void check_scores(const ScoreVector& scores, const TokenLayout& layout) {
    if (scores.size() != layout.visual_count()) {
        fail(ErrorKind::shape, "score vector has " + std::to_string(scores.size()) +
                                   " entries for " + std::to_string(layout.visual_count()) +
                                   " visual tokens");
    }
}

void check_retain(std::size_t retain, const TokenLayout& layout) {
    if (retain > layout.visual_count()) {
        fail(ErrorKind::bounds, "retain " + std::to_string(retain) + " exceeds " +
                                    std::to_string(layout.visual_count()) + " visual tokens");
    }
}

// alpha * minmax(attention) + (1 - alpha) * (1 - minmax(similarity))
ScoreVector blend(std::span<const double> attention, std::span<const double> similarity,
                  double alpha) {
    if (attention.empty()) return {};
    const ScoreVector importance = numeric::minmax_normalize(attention);
    const ScoreVector redundancy = numeric::minmax_normalize(similarity);
    ScoreVector out(attention.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = alpha * importance[i] + (1.0 - alpha) * (1.0 - redundancy[i]);
    }
    return out;
}

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool,
                                                    std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

bool needs_attention(Strategy s) {
    return s == Strategy::fastv || s == Strategy::reverse_fastv || s == Strategy::window_fastv ||
           s == Strategy::alpha_balance;
}

bool needs_hidden(Strategy s) {
    return s == Strategy::pooling || s == Strategy::alpha_balance;
}

ScoreVector visual_slice(std::span<const float> row, const TokenLayout& layout) {
    return ScoreVector(row.begin() + static_cast<std::ptrdiff_t>(layout.image_start),
                       row.begin() + static_cast<std::ptrdiff_t>(layout.image_end));
}

}  // namespace

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::pooling: return "pooling";
        case Strategy::fastv: return "fastv";
        case Strategy::reverse_fastv: return "reverse_fastv";
        case Strategy::window_fastv: return "window_fastv";
        case Strategy::alpha_balance: return "alpha_balance";
    }
    return "fastv";
}

Strategy parse_strategy(std::string_view s) {
    for (Strategy k : {Strategy::random, Strategy::pooling, Strategy::fastv,
                       Strategy::reverse_fastv, Strategy::window_fastv, Strategy::alpha_balance}) {
        if (s == to_string(k)) return k;
    }
    if (s == "fastv_vis") return Strategy::fastv;
    fail(ErrorKind::config, "unknown strategy '" + std::string(s) + "'");
}

std::string_view to_string(Guidance g) {
    return g == Guidance::last_text ? "last_text" : "last_visual";
}

Guidance parse_guidance(std::string_view s) {
    if (s == "last_text") return Guidance::last_text;
    if (s == "last_visual") return Guidance::last_visual;
    fail(ErrorKind::config, "unknown guidance '" + std::string(s) + "'");
}

std::vector<std::size_t> PruneResult::visual_retained() const {
    std::vector<std::size_t> out;
    for (std::size_t pos : retained) {
        if (layout.is_visual(pos)) out.push_back(pos - layout.image_start);
    }
    return out;
}

ScoreVector fastv_scores(const AttentionTrace& trace, std::size_t layer, Guidance guidance) {
    if (layer == 0 || layer > trace.num_layers) {
        fail(ErrorKind::data, "no attention row for layer " + std::to_string(layer) +
                                  " - 1 in a trace with " + std::to_string(trace.num_layers) +
                                  " layers");
    }
    const auto row = guidance == Guidance::last_text ? trace.last_text_row(layer - 1)
                                                     : trace.last_visual_row(layer - 1);
    return visual_slice(row, trace.layout);
}

PruneResult select_top(const ScoreVector& scores, const TokenLayout& layout, std::size_t retain) {
    check_scores(scores, layout);
    check_retain(retain, layout);
    return make_result(layout, numeric::topk_stable(scores, retain), scores);
}

PruneResult select_bottom(const ScoreVector& scores, const TokenLayout& layout,
                          std::size_t retain) {
    check_scores(scores, layout);
    check_retain(retain, layout);
    return make_result(layout, numeric::bottomk_stable(scores, retain), scores);
}

std::vector<std::size_t> window_quotas(const TokenLayout& layout, WindowShape window,
                                       std::size_t retain) {
    check_retain(retain, layout);
    if (window.rows == 0 || window.cols == 0 || window.rows > layout.grid_h ||
        window.cols > layout.grid_w) {
        fail(ErrorKind::config, "window " + std::to_string(window.rows) + "x" +
                                    std::to_string(window.cols) + " does not fit the " +
                                    std::to_string(layout.grid_h) + "x" +
                                    std::to_string(layout.grid_w) + " grid");
    }
    const auto tiles = tile_grid(layout.grid_h, layout.grid_w, window.rows, window.cols);
    const std::size_t V = layout.visual_count();
    std::vector<std::size_t> quotas(tiles.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        quotas[i] = retain * tiles[i].area() / V;
        assigned += quotas[i];
    }
    // Leftover tokens go one each to windows in row-major order.
    for (std::size_t i = 0; assigned < retain; ++i) {
        ++quotas[i];
        ++assigned;
    }
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (quotas[i] > tiles[i].area()) {
            fail(ErrorKind::config, "window " + std::to_string(i) + " has quota " +
                                        std::to_string(quotas[i]) + " but only " +
                                        std::to_string(tiles[i].area()) + " tokens");
        }
    }
    return quotas;
}

PruneResult select_window(const ScoreVector& scores, const TokenLayout& layout, WindowShape window,
                          std::size_t retain) {
    check_scores(scores, layout);
    const auto quotas = window_quotas(layout, window, retain);
    const auto tiles = tile_grid(layout.grid_h, layout.grid_w, window.rows, window.cols);
    std::vector<std::size_t> kept;
    kept.reserve(retain);
    ScoreVector local;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const auto members = tiles[i].members(layout.grid_w);
        local.resize(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) local[j] = scores[members[j]];
        for (std::size_t j : numeric::topk_stable(local, quotas[i])) kept.push_back(members[j]);
    }
    std::sort(kept.begin(), kept.end());
    return make_result(layout, kept, scores);
}

std::size_t pooled_count(const TokenLayout& layout, std::size_t pool) {
    if (pool == 0) fail(ErrorKind::config, "pool size must be >= 1");
    return ((layout.grid_h + pool - 1) / pool) * ((layout.grid_w + pool - 1) / pool);
}

PruneResult select_pooling(const HiddenView& hidden, const TokenLayout& layout, std::size_t pool) {
    if (pool == 0) fail(ErrorKind::config, "pool size must be >= 1");
    if (hidden.values.empty() || hidden.dim == 0) {
        fail(ErrorKind::data, "pooling needs hidden states");
    }
    if (hidden.rows != layout.seq_len || hidden.values.size() != hidden.rows * hidden.dim) {
        fail(ErrorKind::shape, "hidden states do not match the layout");
    }
    ScoreVector norms(layout.visual_count());
    for (std::size_t v = 0; v < norms.size(); ++v) {
        double l1 = 0.0;
        for (float x : hidden.row(layout.image_start + v)) l1 += std::abs(static_cast<double>(x));
        norms[v] = l1;
    }
    std::vector<std::size_t> kept;
    ScoreVector local;
    for (const auto& tile : tile_grid(layout.grid_h, layout.grid_w, pool, pool)) {
        const auto members = tile.members(layout.grid_w);
        local.resize(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) local[j] = norms[members[j]];
        kept.push_back(members[numeric::topk_stable(local, 1).front()]);
    }
    std::sort(kept.begin(), kept.end());
    return make_result(layout, kept, std::nullopt);
}

PruneResult select_random(const TokenLayout& layout, std::size_t retain, std::uint64_t seed) {
    check_retain(retain, layout);
    std::vector<std::size_t> pool(layout.visual_count());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    return make_result(layout, sample_without_replacement(std::move(pool), retain, seed),
                       std::nullopt);
}

ScoreVector alpha_scores(const ScoreVector& attention, const HiddenView& hidden,
                         const TokenLayout& layout, std::size_t reference, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::config, "alpha must lie in [0, 1]");
    check_scores(attention, layout);
    if (hidden.values.empty() || hidden.dim == 0) {
        fail(ErrorKind::data, "alpha_balance needs hidden states");
    }
    if (hidden.rows != layout.seq_len || reference >= hidden.rows ||
        hidden.values.size() != hidden.rows * hidden.dim) {
        fail(ErrorKind::shape, "hidden states do not match the layout");
    }
    const auto ref = hidden.row(reference);
    ScoreVector similarity(layout.visual_count());
    for (std::size_t v = 0; v < similarity.size(); ++v) {
        similarity[v] = numeric::cosine_similarity(hidden.row(layout.image_start + v), ref);
    }
    return blend(attention, similarity, alpha);
}

void check_config(const PruneConfig& c, const TokenLayout& layout) {
    if (!std::isfinite(c.alpha) || c.alpha < 0.0 || c.alpha > 1.0) {
        fail(ErrorKind::config, "alpha must lie in [0, 1]");
    }
    if (c.window.rows == 0 || c.window.cols == 0) fail(ErrorKind::config, "window dims must be >= 1");
    if (c.pool == 0) fail(ErrorKind::config, "pool size must be >= 1");
    if (c.strategy == Strategy::pooling) {
        const std::size_t n = pooled_count(layout, c.pool);
        if (c.retain != 0 && c.retain != n) {
            fail(ErrorKind::config, "pooling with a=" + std::to_string(c.pool) + " keeps " +
                                        std::to_string(n) + " tokens, not " +
                                        std::to_string(c.retain));
        }
    } else {
        check_retain(c.retain, layout);
    }
    if (c.strategy == Strategy::window_fastv) {
        (void)window_quotas(layout, c.window, c.retain);
    }
    if (c.pooled_embeddings && c.strategy != Strategy::pooling) {
        fail(ErrorKind::config, "pooled embeddings only apply to the pooling strategy");
    }
}

PruneResult prune(const AttentionTrace& trace, const PruneConfig& config) {
    const TokenLayout& layout = trace.layout;
    check_config(config, layout);
    if (needs_attention(config.strategy) &&
        (config.layer == 0 || config.layer > trace.num_layers)) {
        fail(ErrorKind::config, std::string(to_string(config.strategy)) + " at layer " +
                                    std::to_string(config.layer) + " needs attention from layer " +
                                    "K-1, but the trace has " + std::to_string(trace.num_layers) +
                                    " layers");
    }
    if (needs_hidden(config.strategy)) {
        if (!trace.hidden) {
            fail(ErrorKind::config, std::string(to_string(config.strategy)) +
                                        " needs hidden states, the trace has none");
        }
        if (trace.hidden->layer != config.layer) {
            fail(ErrorKind::config, "trace holds hidden states for layer " +
                                        std::to_string(trace.hidden->layer) + ", config asks for " +
                                        std::to_string(config.layer));
        }
    }

    PruneResult result;
    switch (config.strategy) {
        case Strategy::fastv:
            result = select_top(fastv_scores(trace, config.layer, config.guidance), layout,
                                config.retain);
            break;
        case Strategy::reverse_fastv:
            result = select_bottom(fastv_scores(trace, config.layer, config.guidance), layout,
                                   config.retain);
            break;
        case Strategy::window_fastv:
            result = select_window(fastv_scores(trace, config.layer, config.guidance), layout,
                                   config.window, config.retain);
            break;
        case Strategy::alpha_balance: {
            const auto hidden = HiddenView::of(*trace.hidden, layout.seq_len);
            const auto scores =
                alpha_scores(fastv_scores(trace, config.layer, config.guidance), hidden, layout,
                             layout.seq_len - 1, config.alpha);
            result = select_top(scores, layout, config.retain);
            break;
        }
        case Strategy::pooling:
            result = select_pooling(HiddenView::of(*trace.hidden, layout.seq_len), layout,
                                    config.pool);
            break;
        case Strategy::random:
            result = select_random(layout, config.retain, config.seed);
            break;
    }
    result.config = config;
    result.config.retain = result.visual_retained().size();
    return result;
}

namespace {

// Ranking over the alive visual tokens of a partially pruned sequence.
StageDecision prune_alive(const StageContext& ctx, const PruneConfig& config) {
    const TokenLayout& layout = ctx.layout;
    const auto& map = ctx.state.index_map;
    std::vector<std::size_t> alive_rows;  // rows of ctx.state.x that are visual
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (layout.is_visual(map[i])) alive_rows.push_back(i);
    }
    const std::size_t retain = ctx.stage.retain;
    if (retain > alive_rows.size()) {
        fail(ErrorKind::bounds, "stage keeps more visual tokens than are alive");
    }

    std::vector<std::size_t> picked;  // indices into alive_rows
    if (config.strategy == Strategy::random) {
        std::vector<std::size_t> pool(alive_rows.size());
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        picked = sample_without_replacement(std::move(pool), retain,
                                            derive_seed(config.seed, ctx.stage_index));
    } else {
        const auto row = config.guidance == Guidance::last_text ? ctx.last_text_row
                                                                : ctx.last_visual_row;
        ScoreVector scores(alive_rows.size());
        for (std::size_t j = 0; j < alive_rows.size(); ++j) scores[j] = row[map[alive_rows[j]]];
        if (config.strategy == Strategy::alpha_balance) {
            const auto& x = ctx.state.x;
            const auto ref = std::span<const float>(x.row(x.rows() - 1).data(),
                                                    static_cast<std::size_t>(x.cols()));
            ScoreVector sim(alive_rows.size());
            for (std::size_t j = 0; j < alive_rows.size(); ++j) {
                const auto r = static_cast<Eigen::Index>(alive_rows[j]);
                sim[j] = numeric::cosine_similarity(
                    std::span<const float>(x.row(r).data(), static_cast<std::size_t>(x.cols())),
                    ref);
            }
            scores = blend(scores, sim, config.alpha);
        }
        picked = config.strategy == Strategy::reverse_fastv
                     ? numeric::bottomk_stable(scores, retain)
                     : numeric::topk_stable(scores, retain);
    }

    StageDecision decision;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!layout.is_visual(map[i])) decision.retained.push_back(map[i]);
    }
    for (std::size_t j : picked) decision.retained.push_back(map[alive_rows[j]]);
    std::sort(decision.retained.begin(), decision.retained.end());
    return decision;
}

// Mean embedding of each kept token's pooling tile, in ascending token order.
Matrix pooled_rows(const Matrix& x, const TokenLayout& layout, const PruneResult& result,
                   std::size_t pool) {
    const auto kept = result.visual_retained();
    Matrix out(static_cast<Eigen::Index>(kept.size()), x.cols());
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const std::size_t r0 = (kept[k] / layout.grid_w) / pool * pool;
        const std::size_t c0 = (kept[k] % layout.grid_w) / pool * pool;
        const GridWindow tile{r0, c0, std::min(pool, layout.grid_h - r0),
                              std::min(pool, layout.grid_w - c0)};
        out.row(static_cast<Eigen::Index>(k)).setZero();
        for (std::size_t m : tile.members(layout.grid_w)) {
            out.row(static_cast<Eigen::Index>(k)) +=
                x.row(static_cast<Eigen::Index>(layout.image_start + m));
        }
        out.row(static_cast<Eigen::Index>(k)) /= static_cast<float>(tile.area());
    }
    return out;
}

}  // namespace

StrategyHook make_strategy_hook(const PruneConfig& config) {
    return [config](const StageContext& ctx) -> StageDecision {
        PruneConfig cfg = config;
        cfg.retain = ctx.stage.retain;
        cfg.layer = ctx.stage.layer;
        if (needs_attention(cfg.strategy) && ctx.last_text_row.empty()) {
            fail(ErrorKind::config, std::string(to_string(cfg.strategy)) +
                                        " cannot run at layer 0: no attention has been computed");
        }
        if (!ctx.all_visual_alive()) {
            if (cfg.strategy == Strategy::window_fastv || cfg.strategy == Strategy::pooling) {
                fail(ErrorKind::config, std::string(to_string(cfg.strategy)) +
                                            " needs the full visual grid; use it as the first stage");
            }
            return prune_alive(ctx, cfg);
        }

        // Every token is alive, so current rows are original positions.
        const TokenLayout& layout = ctx.layout;
        if (cfg.strategy == Strategy::pooling) cfg.retain = 0;
        check_config(cfg, layout);
        const Matrix& x = ctx.state.x;
        const HiddenView hidden{std::span<const float>(x.data(), static_cast<std::size_t>(x.size())),
                                layout.seq_len, static_cast<std::size_t>(x.cols())};
        const auto row = cfg.guidance == Guidance::last_text ? ctx.last_text_row
                                                             : ctx.last_visual_row;
        PruneResult result;
        switch (cfg.strategy) {
            case Strategy::fastv:
                result = select_top(visual_slice(row, layout), layout, cfg.retain);
                break;
            case Strategy::reverse_fastv:
                result = select_bottom(visual_slice(row, layout), layout, cfg.retain);
                break;
            case Strategy::window_fastv:
                result = select_window(visual_slice(row, layout), layout, cfg.window, cfg.retain);
                break;
            case Strategy::alpha_balance:
                result = select_top(alpha_scores(visual_slice(row, layout), hidden, layout,
                                                 layout.seq_len - 1, cfg.alpha),
                                    layout, cfg.retain);
                break;
            case Strategy::pooling:
                result = select_pooling(hidden, layout, cfg.pool);
                break;
            case Strategy::random:
                result = select_random(layout, cfg.retain, cfg.seed);
                break;
        }
        StageDecision decision{std::move(result.retained), {}};
        if (cfg.pooled_embeddings) {
            PruneResult view;
            view.layout = layout;
            view.retained = decision.retained;
            decision.replacement = pooled_rows(x, layout, view, cfg.pool);
        }
        return decision;
    };
}

}  // namespace tpl
