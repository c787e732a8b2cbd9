// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace tpl {

/// Sequence geometry: visual tokens occupy [image_start, image_end) and form a
/// grid_h x grid_w raster in row-major order.
struct TokenLayout {
    std::size_t seq_len = 0;
    std::size_t image_start = 0;
    std::size_t image_end = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t visual_count() const noexcept { return image_end - image_start; }
    std::size_t text_count() const noexcept { return seq_len - visual_count(); }
    bool is_visual(std::size_t position) const noexcept {
        return position >= image_start && position < image_end;
    }

    /// Human-readable invariant violations, empty when the layout is valid.
    std::vector<std::string> violations() const;
    /// Throws a validation error naming the first violation.
    void check() const;

    /// Text prefix, a grid of visual tokens, then a text suffix.
    static TokenLayout make(std::size_t text_prefix, std::size_t grid_h, std::size_t grid_w,
                            std::size_t text_suffix);

    bool operator==(const TokenLayout&) const = default;
};

/// A rectangular tile of the visual grid.
struct GridWindow {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t area() const noexcept { return rows * cols; }
    /// Visual-local indices (row-major raster positions) covered by the tile, ascending.
    std::vector<std::size_t> members(std::size_t grid_w) const;
};

/// Non-overlapping tiles of size tile_h x tile_w in row-major order. Tiles on
/// the bottom and right edges are smaller when the grid does not divide.
std::vector<GridWindow> tile_grid(std::size_t grid_h, std::size_t grid_w, std::size_t tile_h,
                                  std::size_t tile_w);

/// Non-visual positions [0, s) and [e, L), ascending.
std::vector<std::size_t> non_visual_positions(const TokenLayout& layout);

}  // namespace tpl
