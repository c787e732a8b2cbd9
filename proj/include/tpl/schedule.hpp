// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace tpl {

/// One pruning stage. Layers are numbered from 0; `layer` is the first layer
/// that runs on the compressed sequence, so `layer` layers precede it at the
/// previous length and the guidance attention comes from layer `layer - 1`.
struct ScheduleStage {
    std::size_t layer = 0;
    std::size_t retain = 0;
    /// The stage's guidance layer must materialize its full attention map.
    bool materialize = false;

    bool operator==(const ScheduleStage&) const = default;
};

struct PruneSchedule {
    std::vector<ScheduleStage> stages;

    bool empty() const noexcept { return stages.empty(); }
    /// Visual tokens alive while `layer` executes.
    std::size_t visual_at(std::size_t layer, std::size_t visual_count) const;
    bool any_materialized() const noexcept;

    /// Throws a config error unless layers are strictly increasing and below
    /// num_layers, and retain counts are non-increasing and at most visual_count.
    void check(std::size_t num_layers, std::size_t visual_count) const;

    /// Parses "layer:retain[:m],layer:retain[:m],..."; ":m" marks a
    /// materializing stage. The empty string is the empty schedule.
    static PruneSchedule parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const PruneSchedule&) const = default;
};

}  // namespace tpl
