// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/layout.hpp"

#include <algorithm>

#include "tpl/error.hpp"

namespace tpl {

std::vector<std::string> TokenLayout::violations() const {
    std::vector<std::string> out;
    if (!(image_start < image_end && image_end <= seq_len)) {
        out.push_back("layout: visual span [" + std::to_string(image_start) + ", " +
                      std::to_string(image_end) + ") must satisfy 0 <= s < e <= L=" +
                      std::to_string(seq_len));
        return out;
    }
    if (grid_h == 0 || grid_w == 0 || image_end - image_start != grid_h * grid_w) {
        out.push_back("layout: grid mismatch, e - s = " + std::to_string(image_end - image_start) +
                      " but grid is " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
    }
    return out;
}

void TokenLayout::check() const {
    const auto v = violations();
    if (!v.empty()) {
        throw Error(ErrorKind::validation, "trace-io", v.front());
    }
}

TokenLayout TokenLayout::make(std::size_t text_prefix, std::size_t grid_h, std::size_t grid_w,
                              std::size_t text_suffix) {
    TokenLayout layout;
    layout.image_start = text_prefix;
    layout.image_end = text_prefix + grid_h * grid_w;
    layout.seq_len = layout.image_end + text_suffix;
    layout.grid_h = grid_h;
    layout.grid_w = grid_w;
    return layout;
}

std::vector<std::size_t> GridWindow::members(std::size_t grid_w) const {
    std::vector<std::size_t> out;
    out.reserve(area());
    for (std::size_t r = row; r < row + rows; ++r) {
        for (std::size_t c = col; c < col + cols; ++c) {
            out.push_back(r * grid_w + c);
        }
    }
    return out;
}

std::vector<GridWindow> tile_grid(std::size_t grid_h, std::size_t grid_w, std::size_t tile_h,
                                  std::size_t tile_w) {
    if (tile_h == 0 || tile_w == 0) {
        throw Error(ErrorKind::config, "strategies", "tile dimensions must be >= 1");
    }
    std::vector<GridWindow> tiles;
    for (std::size_t r = 0; r < grid_h; r += tile_h) {
        for (std::size_t c = 0; c < grid_w; c += tile_w) {
            tiles.push_back({r, c, std::min(tile_h, grid_h - r), std::min(tile_w, grid_w - c)});
        }
    }
    return tiles;
}

std::vector<std::size_t> non_visual_positions(const TokenLayout& layout) {
    std::vector<std::size_t> out;
    out.reserve(layout.text_count());
    for (std::size_t i = 0; i < layout.image_start; ++i) {
        out.push_back(i);
    }
    for (std::size_t i = layout.image_end; i < layout.seq_len; ++i) {
        out.push_back(i);
    }
    return out;
}

}  // namespace tpl
