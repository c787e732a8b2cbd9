// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpl/layout.hpp"
#include "tpl/model_dims.hpp"

namespace tpl {

inline constexpr std::string_view kTraceFormat = "tpl-trace/1";

/// Which query rows a stored attention row summarizes. Heads are always
/// averaged.
enum class QueryReduction {
    last_token,     // the single query row (L-1 or e-1)
    mean_all_rows,  // mean over every query row in the causal range
};

std::string_view to_string(QueryReduction q);
QueryReduction parse_query_reduction(std::string_view s);

/// Hidden states (L x dim, row-major) entering layer `layer`.
struct HiddenStates {
    std::size_t layer = 0;
    std::size_t dim = 0;
    std::vector<float> values;

    std::span<const float> row(std::size_t position) const {
        return std::span<const float>(values).subspan(position * dim, dim);
    }
    bool operator==(const HiddenStates&) const = default;
};

/// Per-layer guidance attention rows captured from one forward pass.
///
/// Both row families are stored flat as [layer][position] with seq_len
/// entries per layer. The text row is the attention of the final sequence
/// token; the visual row is the attention of token e-1, so its entries at
/// positions >= e are zero.
struct AttentionTrace {
    TokenLayout layout;
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    QueryReduction query_reduction = QueryReduction::last_token;
    ModelDims model;
    std::vector<float> last_text_rows;
    std::vector<float> last_visual_rows;
    std::optional<HiddenStates> hidden;

    std::span<const float> last_text_row(std::size_t layer) const;
    std::span<const float> last_visual_row(std::size_t layer) const;

    bool operator==(const AttentionTrace&) const = default;
};

struct Violation {
    std::string where;
    std::string what;
};

/// Every invariant breach, empty when valid. Row sums are checked against a
/// 1e-4 tolerance over the causal prefix of the query.
std::vector<Violation> validate_trace(const AttentionTrace& trace);

inline constexpr double kRowSumTolerance = 1e-4;

/// Serializes as "tpl-trace/1". Returns bytes written.
std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink);
std::size_t write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path);

/// Parses and validates. Throws version / format / truncated / checksum /
/// validation errors; never returns an invalid trace.
AttentionTrace read_trace(std::istream& source);
AttentionTrace read_trace_file(const std::filesystem::path& path);

/// Parses framing and checksums but skips invariant validation. For callers
/// that want the violation list rather than an exception.
AttentionTrace read_trace_unvalidated(std::istream& source);

enum class BiasKind {
    uniform,
    monotone_positional,  // mass grows with position: exp(strength * i / V)
    reverse_positional,   // mirror image of monotone_positional
    blocked,              // the central block of the grid gets exp(strength)
};

std::string_view to_string(BiasKind k);
BiasKind parse_bias_kind(std::string_view s);

struct SynthConfig {
    TokenLayout layout;
    BiasKind bias_kind = BiasKind::uniform;
    double bias_strength = 0.0;
    /// Std-dev of Gaussian noise added to the log-weights of each visual token.
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::size_t num_layers = 2;
    std::size_t num_heads = 1;
    /// 0 disables hidden states.
    std::size_t hidden_dim = 0;
    std::size_t hidden_layer = 2;
    /// Share of each row's mass that lands on visual tokens.
    double visual_mass = 0.5;
};

AttentionTrace synthesize_trace(const SynthConfig& cfg);

}  // namespace tpl
