// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "tpl/layout.hpp"
#include "tpl/model_dims.hpp"
#include "tpl/schedule.hpp"

namespace tpl {

/// Analytic prefill cost of a pruning schedule.
struct CostReport {
    std::uint64_t flops_total = 0;
    double flops_ratio = 1.0;
    /// Cache size at the final token count.
    std::uint64_t kv_bytes = 0;
    std::size_t final_tokens = 0;
    /// Training-free reduction V / R_final, absent when no visual token survives.
    std::optional<double> tfrr;
    std::optional<double> trr;
    std::optional<double> latency_median_ms;
};

/// 4nd^2 + 2n^2 d + 2ndm for one decoder layer over n tokens.
std::uint64_t layer_flops(std::uint64_t tokens, const ModelDims& dims);

/// Sum of layer_flops over all layers at the schedule's live token counts.
std::uint64_t schedule_flops(const PruneSchedule& schedule, const ModelDims& dims,
                             std::size_t visual_count, std::size_t text_tokens);

/// schedule_flops / (N * layer_flops(full length)).
double schedule_flops_ratio(const PruneSchedule& schedule, const ModelDims& dims,
                            const TokenLayout& layout, std::size_t text_tokens);

/// tokens x layers x 2 (K and V) x hidden x bytes per element.
std::uint64_t kv_cache_bytes(std::uint64_t tokens, const ModelDims& dims);

/// Token reduction rate: training-aware ratio times training-free ratio.
double trr(double tacr, double tfrr);

/// Visual tokens left after a training-aware compressor merges `patches` by `tacr`.
double visual_tokens_from_patches(double patches, double tacr);

CostReport cost_report(const PruneSchedule& schedule, const ModelDims& dims,
                       const TokenLayout& layout, std::size_t text_tokens, double tacr = 1.0);

}  // namespace tpl
