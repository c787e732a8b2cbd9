// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/bias_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpl/error.hpp"

namespace tpl {

namespace {

const char* const kModule = "bias-metrics";

// Checks that `result` is a well-formed selection over `layout`.
void check_result(const PruneResult& result, const TokenLayout& layout) {
    if (!(result.layout == layout)) {
        throw Error(ErrorKind::shape, kModule, "result layout differs from the batch layout");
    }
    std::size_t text = 0;
    for (std::size_t i = 0; i < result.retained.size(); ++i) {
        const std::size_t pos = result.retained[i];
        if (pos >= layout.seq_len || (i > 0 && pos <= result.retained[i - 1])) {
            throw Error(ErrorKind::shape, kModule,
                        "retained indices must be ascending and inside the sequence");
        }
        if (!layout.is_visual(pos)) ++text;
    }
    if (text != layout.text_count()) {
        throw Error(ErrorKind::shape, kModule, "result drops non-visual tokens");
    }
}

}  // namespace

PositionHistogram retention_frequency(std::span<const PruneResult> results,
                                      const TokenLayout& layout) {
    if (results.empty()) {
        throw Error(ErrorKind::degenerate_input, kModule, "empty batch");
    }
    PositionHistogram hist;
    hist.samples = results.size();
    std::vector<std::size_t> hits(layout.visual_count(), 0);
    for (const auto& r : results) {
        check_result(r, layout);
        for (std::size_t pos : r.retained) {
            if (layout.is_visual(pos)) ++hits[pos - layout.image_start];
        }
    }
    hist.frequency.resize(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        hist.frequency[i] = static_cast<double>(hits[i]) / static_cast<double>(results.size());
    }
    return hist;
}

std::vector<double> attention_by_position(std::span<const AttentionTrace> traces,
                                          const TokenLayout& layout, std::size_t layer,
                                          Guidance guidance) {
    if (traces.empty()) {
        throw Error(ErrorKind::degenerate_input, kModule, "empty batch");
    }
    std::vector<double> mean(layout.visual_count(), 0.0);
    for (const auto& t : traces) {
        if (!(t.layout == layout)) {
            throw Error(ErrorKind::shape, kModule, "trace layout differs from the batch layout");
        }
        const auto scores = fastv_scores(t, layer, guidance);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += scores[i];
    }
    for (double& m : mean) m /= static_cast<double>(traces.size());
    return mean;
}

UniformityReport uniformity_entropy(const PruneResult& result, const TokenLayout& layout,
                                    std::size_t cell_h, std::size_t cell_w) {
    check_result(result, layout);
    UniformityReport rep;
    rep.cell_h = cell_h;
    rep.cell_w = cell_w;
    rep.cells = tile_grid(layout.grid_h, layout.grid_w, cell_h, cell_w);
    rep.counts.assign(rep.cells.size(), 0);

    const auto kept = result.visual_retained();
    if (kept.empty()) {
        throw Error(ErrorKind::degenerate_input, kModule, "no visual tokens retained");
    }
    const std::size_t cells_per_row = (layout.grid_w + cell_w - 1) / cell_w;
    for (std::size_t v : kept) {
        const std::size_t r = v / layout.grid_w;
        const std::size_t c = v % layout.grid_w;
        ++rep.counts[(r / cell_h) * cells_per_row + c / cell_w];
    }

    // Occupancy densities count / area make unequal edge cells comparable.
    std::vector<double> density(rep.cells.size());
    double total = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) {
        density[i] = static_cast<double>(rep.counts[i]) / static_cast<double>(rep.cells[i].area());
        total += density[i];
    }
    const bool flat = std::all_of(density.begin(), density.end(),
                                  [&](double d) { return d == density.front(); });
    if (rep.cells.size() == 1 || flat) {
        rep.entropy = 1.0;
    } else {
        double h = 0.0;
        for (double d : density) {
            if (d > 0.0) {
                const double p = d / total;
                h -= p * std::log(p);
            }
        }
        rep.entropy = std::clamp(h / std::log(static_cast<double>(rep.cells.size())), 0.0, 1.0);
    }

    const double R = static_cast<double>(kept.size());
    const double V = static_cast<double>(layout.visual_count());
    for (std::size_t i = 0; i < rep.cells.size(); ++i) {
        const double expected = R * static_cast<double>(rep.cells[i].area()) / V;
        rep.max_over_expected =
            std::max(rep.max_over_expected, static_cast<double>(rep.counts[i]) / expected);
    }
    return rep;
}

double position_bias_correlation(const PositionHistogram& hist) {
    std::vector<double> position(hist.frequency.size());
    std::iota(position.begin(), position.end(), 0.0);
    return numeric::spearman(hist.frequency, position);
}

}  // namespace tpl
