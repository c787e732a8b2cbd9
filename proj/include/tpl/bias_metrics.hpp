// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tpl/layout.hpp"
#include "tpl/strategies.hpp"
#include "tpl/trace.hpp"

namespace tpl {

/// Fraction of a batch of results that kept each visual position.
struct PositionHistogram {
    std::vector<double> frequency;
    std::size_t samples = 0;
};

/// How evenly the kept tokens spread over a tiling of the grid.
struct UniformityReport {
    std::size_t cell_h = 0;
    std::size_t cell_w = 0;
    std::vector<GridWindow> cells;
    std::vector<std::size_t> counts;
    /// Area-normalized Shannon entropy over cells divided by log(#cells), in [0, 1].
    double entropy = 0.0;
    /// Largest count / expected count (R * area / V) over cells.
    double max_over_expected = 0.0;
};

PositionHistogram retention_frequency(std::span<const PruneResult> results,
                                      const TokenLayout& layout);

/// Element-wise mean of the guidance row of layer K-1 over the visual span.
std::vector<double> attention_by_position(std::span<const AttentionTrace> traces,
                                          const TokenLayout& layout, std::size_t layer,
                                          Guidance guidance);

UniformityReport uniformity_entropy(const PruneResult& result, const TokenLayout& layout,
                                    std::size_t cell_h, std::size_t cell_w);

/// Spearman correlation of frequency against position; positive means late
/// positions are favoured.
double position_bias_correlation(const PositionHistogram& hist);

}  // namespace tpl
