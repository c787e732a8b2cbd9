// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "tpl/error.hpp"
#include "tpl/rng.hpp"
#include "tpl/trace.hpp"

namespace tpl {

std::string_view to_string(BiasKind k) {
    switch (k) {
        case BiasKind::uniform: return "uniform";
        case BiasKind::monotone_positional: return "monotone";
        case BiasKind::reverse_positional: return "reverse";
        case BiasKind::blocked: return "blocked";
    }
    return "uniform";
}

BiasKind parse_bias_kind(std::string_view s) {
    if (s == "uniform") return BiasKind::uniform;
    if (s == "monotone" || s == "monotone-positional") return BiasKind::monotone_positional;
    if (s == "reverse" || s == "reverse-positional") return BiasKind::reverse_positional;
    if (s == "blocked") return BiasKind::blocked;
    throw Error(ErrorKind::config, "trace-io", "unknown bias kind '" + std::string(s) + "'");
}

namespace {

// Log-weight of visual token i before noise.
double bias_logit(const SynthConfig& cfg, std::size_t i) {
    const auto& lay = cfg.layout;
    const double V = static_cast<double>(lay.visual_count());
    switch (cfg.bias_kind) {
        case BiasKind::uniform:
            return 0.0;
        case BiasKind::monotone_positional:
            return cfg.bias_strength * static_cast<double>(i) / V;
        case BiasKind::reverse_positional:
            return cfg.bias_strength * static_cast<double>(lay.visual_count() - 1 - i) / V;
        case BiasKind::blocked: {
            // central block spans the middle half of rows and columns
            const std::size_t r = i / lay.grid_w;
            const std::size_t c = i % lay.grid_w;
            const bool in_rows = 4 * r >= lay.grid_h && 4 * r < 3 * lay.grid_h;
            const bool in_cols = 4 * c >= lay.grid_w && 4 * c < 3 * lay.grid_w;
            return (in_rows && in_cols) ? cfg.bias_strength : 0.0;
        }
    }
    return 0.0;
}

// Fills `row` (length L) with `visual_mass` spread over visual tokens by
// `visual_weights` and the remainder spread evenly over the non-visual
// positions in [0, causal_end).
void fill_row(std::span<float> row, const TokenLayout& lay, const std::vector<double>& visual_weights,
              std::size_t causal_end, double visual_mass) {
    std::size_t text_slots = 0;
    for (std::size_t i = 0; i < causal_end; ++i) {
        if (!lay.is_visual(i)) ++text_slots;
    }
    const double vmass = text_slots == 0 ? 1.0 : visual_mass;
    double wsum = 0.0;
    for (double w : visual_weights) wsum += w;

    std::vector<double> values(row.size(), 0.0);
    for (std::size_t i = 0; i < causal_end; ++i) {
        if (lay.is_visual(i)) {
            values[i] = vmass * visual_weights[i - lay.image_start] / wsum;
        } else {
            values[i] = (1.0 - vmass) / static_cast<double>(text_slots);
        }
    }
    // Renormalize in float so the stored row sums to 1 as closely as float allows.
    double total = 0.0;
    for (double v : values) total += static_cast<float>(v);
    for (std::size_t i = 0; i < row.size(); ++i) {
        row[i] = static_cast<float>(values[i] / total);
    }
}

}  // namespace

AttentionTrace synthesize_trace(const SynthConfig& cfg) {
    cfg.layout.check();
    if (!std::isfinite(cfg.bias_strength) || cfg.bias_strength < 0.0 ||
        !std::isfinite(cfg.noise_sigma) || cfg.noise_sigma < 0.0) {
        throw Error(ErrorKind::config, "trace-io", "bias_strength and noise_sigma must be finite and >= 0");
    }
    if (!(cfg.visual_mass > 0.0 && cfg.visual_mass <= 1.0)) {
        throw Error(ErrorKind::config, "trace-io", "visual_mass must lie in (0, 1]");
    }
    if (cfg.num_layers == 0 || cfg.num_heads == 0) {
        throw Error(ErrorKind::config, "trace-io", "num_layers and num_heads must be >= 1");
    }
    if (cfg.hidden_dim > 0 && cfg.hidden_layer > cfg.num_layers) {
        throw Error(ErrorKind::config, "trace-io", "hidden_layer beyond num_layers");
    }

    const auto& lay = cfg.layout;
    const std::size_t L = lay.seq_len;
    const std::size_t V = lay.visual_count();

    AttentionTrace t;
    t.layout = lay;
    t.num_layers = cfg.num_layers;
    t.num_heads = cfg.num_heads;
    t.query_reduction = QueryReduction::last_token;
    t.model.layers = cfg.num_layers;
    t.model.heads = cfg.num_heads;
    t.model.hidden = cfg.hidden_dim > 0 ? cfg.hidden_dim : 64;
    t.model.intermediate = 4 * t.model.hidden;
    t.model.kv_bytes_per_elem = 2;
    t.last_text_rows.assign(cfg.num_layers * L, 0.0f);
    t.last_visual_rows.assign(cfg.num_layers * L, 0.0f);

    Rng text_rng(derive_seed(cfg.seed, 1));
    Rng visual_rng(derive_seed(cfg.seed, 2));
    std::vector<double> weights(V);
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        for (std::size_t i = 0; i < V; ++i) {
            weights[i] = std::exp(bias_logit(cfg, i) + cfg.noise_sigma * text_rng.normal());
        }
        fill_row(std::span<float>(t.last_text_rows).subspan(layer * L, L), lay, weights, L,
                 cfg.visual_mass);
        // The last visual token sees no positional bias, only noise.
        for (std::size_t i = 0; i < V; ++i) {
            weights[i] = std::exp(cfg.noise_sigma * visual_rng.normal());
        }
        fill_row(std::span<float>(t.last_visual_rows).subspan(layer * L, L), lay, weights,
                 lay.image_end, cfg.visual_mass);
    }

    if (cfg.hidden_dim > 0) {
        Rng hidden_rng(derive_seed(cfg.seed, 3));
        HiddenStates hs;
        hs.layer = cfg.hidden_layer;
        hs.dim = cfg.hidden_dim;
        hs.values.resize(L * cfg.hidden_dim);
        for (float& v : hs.values) {
            v = static_cast<float>(hidden_rng.normal());
        }
        t.hidden = std::move(hs);
    }
    return t;
}

}  // namespace tpl
