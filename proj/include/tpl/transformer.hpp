// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tpl/layout.hpp"
#include "tpl/schedule.hpp"
#include "tpl/trace.hpp"

namespace tpl {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    std::size_t num_layers = 8;
    std::size_t hidden = 256;
    std::size_t heads = 8;
    std::size_t intermediate = 1024;
    std::uint64_t seed = 0;

    std::size_t head_dim() const noexcept { return heads == 0 ? 0 : hidden / heads; }
    void check() const;
};

/// Pre-norm decoder-only transformer with random weights. Immutable after
/// construction.
class ToyTransformer {
public:
    struct Layer {
        Matrix wq, wk, wv, wo;  // hidden x hidden
        Matrix w_up;            // hidden x intermediate
        Matrix w_down;          // intermediate x hidden
    };

    explicit ToyTransformer(const ModelConfig& cfg);

    const ModelConfig& config() const noexcept { return m_config; }
    const Layer& layer(std::size_t i) const { return m_layers.at(i); }
    /// FNV-1a over the bit patterns of every weight in one layer.
    std::uint64_t weight_checksum(std::size_t layer) const;

private:
    ModelConfig m_config;
    std::vector<Layer> m_layers;
};

ToyTransformer init_model(const ModelConfig& cfg);

/// The live sequence mid-forward.
struct ForwardState {
    Matrix x;
    /// Original position of each current row, strictly increasing.
    std::vector<std::size_t> index_map;
    std::size_t layer = 0;
};

/// Keeps the rows whose original positions are in `retained` (any order,
/// duplicates ignored). Every retained index must be alive and every
/// non-visual token must be kept.
ForwardState compress_sequence(const ForwardState& state, std::span<const std::size_t> retained,
                               const TokenLayout& layout);

/// What a pruning hook sees at one schedule stage.
struct StageContext {
    std::size_t stage_index = 0;
    ScheduleStage stage;
    const TokenLayout& layout;
    const ForwardState& state;
    /// Guidance rows from layer stage.layer - 1 in original coordinates;
    /// empty for a stage at layer 0.
    std::span<const float> last_text_row;
    std::span<const float> last_visual_row;

    bool all_visual_alive() const noexcept {
        return state.index_map.size() == layout.seq_len;
    }
};

struct StageDecision {
    std::vector<std::size_t> retained;
    /// Optional replacement embeddings for the retained visual tokens in
    /// ascending order (one row each). Empty keeps the original rows.
    Matrix replacement;
};

using StrategyHook = std::function<StageDecision(const StageContext&)>;

/// A hook that keeps every alive token.
StrategyHook keep_all_hook();

struct ForwardOptions {
    QueryReduction capture = QueryReduction::last_token;
    /// Capture hidden states entering this layer (num_layers = final output).
    std::optional<std::size_t> capture_hidden_layer;
};

struct ForwardResult {
    Matrix output;
    /// One layer per model layer. Pruned positions hold zero attention and
    /// zero hidden state.
    AttentionTrace trace;
    std::vector<std::size_t> index_map;
    /// Live sequence length while each layer ran.
    std::vector<std::size_t> tokens_per_layer;
    bool materialized = false;
    /// Wall time spent inside hooks and compression.
    double selection_seconds = 0.0;
};

ForwardResult forward(const ToyTransformer& model, const Matrix& embeddings,
                      const TokenLayout& layout, const PruneSchedule& schedule,
                      const StrategyHook& hook, const ForwardOptions& options = {});

struct LatencyReport {
    double median_ms = 0.0;
    double p10_ms = 0.0;
    double p90_ms = 0.0;
    std::size_t repeats = 0;
    bool materialized = false;
    std::vector<std::size_t> tokens_per_layer;
    std::vector<double> samples_ms;
    double selection_median_ms = 0.0;
};

/// One untimed warm-up pass followed by `repeats` timed passes on the
/// calling thread. repeats must be >= 3.
LatencyReport time_forward(const ToyTransformer& model, const Matrix& embeddings,
                           const TokenLayout& layout, const PruneSchedule& schedule,
                           const StrategyHook& hook, std::size_t repeats);

/// N(0, 1) embeddings drawn from `seed`.
Matrix random_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed);

}  // namespace tpl
