// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/cost_model.hpp"

#include <cmath>

#include "tpl/error.hpp"

namespace tpl {

namespace {

const char* const kModule = "cost-model";

void check_factor(double f, const char* name) {
    if (!std::isfinite(f) || f < 1.0) {
        throw Error(ErrorKind::config, kModule, std::string(name) + " must be a finite factor >= 1");
    }
}

}  // namespace

std::uint64_t layer_flops(std::uint64_t n, const ModelDims& dims) {
    const std::uint64_t d = dims.hidden;
    const std::uint64_t m = dims.intermediate;
    return 4 * n * d * d + 2 * n * n * d + 2 * n * d * m;
}

std::uint64_t schedule_flops(const PruneSchedule& schedule, const ModelDims& dims,
                             std::size_t visual_count, std::size_t text_tokens) {
    try {
        schedule.check(dims.layers, visual_count);
    } catch (const Error& e) {
        throw Error(ErrorKind::config, kModule, e.what());
    }
    std::uint64_t total = 0;
    for (std::size_t layer = 0; layer < dims.layers; ++layer) {
        total += layer_flops(text_tokens + schedule.visual_at(layer, visual_count), dims);
    }
    return total;
}

double schedule_flops_ratio(const PruneSchedule& schedule, const ModelDims& dims,
                            const TokenLayout& layout, std::size_t text_tokens) {
    const std::size_t V = layout.visual_count();
    const std::uint64_t pruned = schedule_flops(schedule, dims, V, text_tokens);
    const std::uint64_t full = dims.layers * layer_flops(text_tokens + V, dims);
    if (full == 0) {
        throw Error(ErrorKind::config, kModule, "unpruned cost is zero");
    }
    return static_cast<double>(pruned) / static_cast<double>(full);
}

std::uint64_t kv_cache_bytes(std::uint64_t tokens, const ModelDims& dims) {
    return tokens * dims.layers * 2 * dims.hidden * dims.kv_bytes_per_elem;
}

double trr(double tacr, double tfrr) {
    check_factor(tacr, "TACR");
    check_factor(tfrr, "TFRR");
    return tacr * tfrr;
}

double visual_tokens_from_patches(double patches, double tacr) {
    check_factor(tacr, "TACR");
    return patches / tacr;
}

CostReport cost_report(const PruneSchedule& schedule, const ModelDims& dims,
                       const TokenLayout& layout, std::size_t text_tokens, double tacr) {
    CostReport rep;
    const std::size_t V = layout.visual_count();
    rep.flops_total = schedule_flops(schedule, dims, V, text_tokens);
    rep.flops_ratio = schedule_flops_ratio(schedule, dims, layout, text_tokens);
    const std::size_t final_visual = schedule.empty() ? V : schedule.stages.back().retain;
    rep.final_tokens = text_tokens + final_visual;
    rep.kv_bytes = kv_cache_bytes(rep.final_tokens, dims);
    if (final_visual > 0) {
        rep.tfrr = static_cast<double>(V) / static_cast<double>(final_visual);
        rep.trr = trr(tacr, *rep.tfrr);
    }
    return rep;
}

}  // namespace tpl
