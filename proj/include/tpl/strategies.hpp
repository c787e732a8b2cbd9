// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tpl/layout.hpp"
#include "tpl/numeric.hpp"
#include "tpl/trace.hpp"
#include "tpl/transformer.hpp"

namespace tpl {

enum class Strategy { random, pooling, fastv, reverse_fastv, window_fastv, alpha_balance };
enum class Guidance { last_text, last_visual };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);
std::string_view to_string(Guidance g);
Guidance parse_guidance(std::string_view s);

struct WindowShape {
    std::size_t rows = 1;
    std::size_t cols = 1;
    bool operator==(const WindowShape&) const = default;
};

struct PruneConfig {
    Strategy strategy = Strategy::fastv;
    std::size_t retain = 0;
    /// First layer on the pruned sequence; attention comes from layer - 1.
    std::size_t layer = 2;
    Guidance guidance = Guidance::last_text;
    WindowShape window{4, 4};
    std::size_t pool = 2;
    double alpha = 0.5;
    std::uint64_t seed = 0;
    /// Pooling only: replace each kept token by its window's mean embedding.
    bool pooled_embeddings = false;

    bool operator==(const PruneConfig&) const = default;
};

struct PruneResult {
    TokenLayout layout;
    /// Ascending global positions: every non-visual token plus the kept visual ones.
    std::vector<std::size_t> retained;
    std::optional<ScoreVector> visual_scores;
    PruneConfig config;

    /// Kept visual positions relative to image_start, ascending.
    std::vector<std::size_t> visual_retained() const;
};

/// Read-only view of an (rows x dim) row-major float matrix.
struct HiddenView {
    std::span<const float> values;
    std::size_t rows = 0;
    std::size_t dim = 0;

    std::span<const float> row(std::size_t i) const { return values.subspan(i * dim, dim); }
    static HiddenView of(const HiddenStates& hs, std::size_t rows) {
        return {hs.values, rows, hs.dim};
    }
};

/// The guidance row of layer K-1 restricted to the visual span.
ScoreVector fastv_scores(const AttentionTrace& trace, std::size_t layer, Guidance guidance);

PruneResult select_top(const ScoreVector& scores, const TokenLayout& layout, std::size_t retain);
PruneResult select_bottom(const ScoreVector& scores, const TokenLayout& layout, std::size_t retain);

/// Per-window retain counts for `select_window`, in row-major window order.
std::vector<std::size_t> window_quotas(const TokenLayout& layout, WindowShape window,
                                       std::size_t retain);
PruneResult select_window(const ScoreVector& scores, const TokenLayout& layout, WindowShape window,
                          std::size_t retain);

/// One token per a x a tile: the one whose hidden state has the largest L1 norm.
PruneResult select_pooling(const HiddenView& hidden, const TokenLayout& layout, std::size_t pool);
std::size_t pooled_count(const TokenLayout& layout, std::size_t pool);

PruneResult select_random(const TokenLayout& layout, std::size_t retain, std::uint64_t seed);

/// alpha * minmax(attention) + (1 - alpha) * (1 - minmax(cosine to `reference`)).
ScoreVector alpha_scores(const ScoreVector& attention, const HiddenView& hidden,
                         const TokenLayout& layout, std::size_t reference, double alpha);

/// Throws a config (or bounds) error when the config cannot apply to `layout`.
void check_config(const PruneConfig& config, const TokenLayout& layout);

/// Runs the configured strategy over a stored trace.
PruneResult prune(const AttentionTrace& trace, const PruneConfig& config);

/// Hook that applies `config` at every schedule stage of a live forward. The
/// stage's retain count overrides config.retain. Once some visual tokens are
/// gone, only ranking strategies (fastv, reverse_fastv, alpha_balance, random)
/// can run again; they rank the alive tokens only.
StrategyHook make_strategy_hook(const PruneConfig& config);

}  // namespace tpl
