// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/transformer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "tpl/error.hpp"
#include "tpl/rng.hpp"

namespace tpl {

namespace {

const char* const kModule = "toy-transformer";

// Query rows per attention tile.
constexpr Eigen::Index kQueryBlock = 64;

using Clock = std::chrono::steady_clock;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<float>(stddev * rng.normal());
    }
    return m;
}

Matrix layer_norm(const Matrix& x) {
    constexpr float kEps = 1e-5f;
    Matrix out(x.rows(), x.cols());
    const float n = static_cast<float>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float mean = x.row(i).sum() / n;
        const float var = (x.row(i).array() - mean).square().sum() / n;
        out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + kEps);
    }
    return out;
}

float gelu(float v) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * v * (1.0f + std::tanh(kC * (v + 0.044715f * v * v * v)));
}

// Where captured attention goes for one layer.
struct CaptureTarget {
    std::span<float> text_row;    // original coordinates
    std::span<float> visual_row;  // original coordinates
    QueryReduction reduction;
};

struct AttentionCapture {
    std::vector<double> text;
    std::vector<double> visual;
};

// Causal multi-head attention over the live sequence. The fused path never
// holds more than one query tile of probabilities; the materializing path
// writes every head's full probability map and reads it back for the value
// product. Both paths perform identical arithmetic per tile.
Matrix attention(const ToyTransformer::Layer& w, const Matrix& xn, std::size_t heads,
                 bool materialize, const std::vector<std::size_t>& index_map,
                 const TokenLayout& layout, CaptureTarget capture) {
    const Eigen::Index n = xn.rows();
    const Eigen::Index d = xn.cols();
    const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    const Matrix q = xn * w.wq;
    const Matrix k = xn * w.wk;
    const Matrix v = xn * w.wv;
    Matrix ctx(n, d);

    // Query rows whose attention is recorded.
    const Eigen::Index text_query = n - 1;
    Eigen::Index visual_query = -1;
    Eigen::Index visual_rows = 0;  // rows with original position < e
    for (Eigen::Index i = 0; i < n; ++i) {
        if (index_map[static_cast<std::size_t>(i)] < layout.image_end) {
            visual_query = i;
            visual_rows = i + 1;
        }
    }
    std::vector<double> text_acc(static_cast<std::size_t>(n), 0.0);
    std::vector<double> visual_acc(static_cast<std::size_t>(n), 0.0);

    std::vector<Matrix> full;
    if (materialize) {
        full.assign(heads, Matrix::Zero(n, n));
    }

    Matrix p;
    for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index col = static_cast<Eigen::Index>(h) * dh;
        for (Eigen::Index b0 = 0; b0 < n; b0 += kQueryBlock) {
            const Eigen::Index rows = std::min(kQueryBlock, n - b0);
            const Eigen::Index kv = b0 + rows;
            p.noalias() = q.block(b0, col, rows, dh) * k.block(0, col, kv, dh).transpose();
            for (Eigen::Index r = 0; r < rows; ++r) {
                const Eigen::Index visible = b0 + r + 1;
                auto row = p.row(r);
                row.head(visible) *= scale;
                const float peak = row.head(visible).maxCoeff();
                row.head(visible) = (row.head(visible).array() - peak).exp();
                row.head(visible) /= row.head(visible).sum();
                row.tail(kv - visible).setZero();
            }
            if (materialize) {
                full[h].block(b0, 0, rows, kv) = p;
            } else {
                ctx.block(b0, col, rows, dh).noalias() = p * v.block(0, col, kv, dh);
            }
            for (Eigen::Index r = 0; r < rows; ++r) {
                const Eigen::Index qi = b0 + r;
                const bool all_rows = capture.reduction == QueryReduction::mean_all_rows;
                if (all_rows || qi == text_query) {
                    for (Eigen::Index c = 0; c <= qi; ++c) text_acc[c] += p(r, c);
                }
                if ((all_rows && qi < visual_rows) || qi == visual_query) {
                    for (Eigen::Index c = 0; c <= qi; ++c) visual_acc[c] += p(r, c);
                }
            }
        }
        if (materialize) {
            for (Eigen::Index b0 = 0; b0 < n; b0 += kQueryBlock) {
                const Eigen::Index rows = std::min(kQueryBlock, n - b0);
                const Eigen::Index kv = b0 + rows;
                ctx.block(b0, col, rows, dh).noalias() =
                    full[h].block(b0, 0, rows, kv) * v.block(0, col, kv, dh);
            }
        }
    }

    const bool all_rows = capture.reduction == QueryReduction::mean_all_rows;
    const double text_div = static_cast<double>(heads) * (all_rows ? static_cast<double>(n) : 1.0);
    const double visual_div =
        static_cast<double>(heads) * (all_rows ? static_cast<double>(visual_rows) : 1.0);
    for (Eigen::Index c = 0; c < n; ++c) {
        const std::size_t pos = index_map[static_cast<std::size_t>(c)];
        capture.text_row[pos] = static_cast<float>(text_acc[c] / text_div);
        if (visual_query >= 0) {
            capture.visual_row[pos] = static_cast<float>(visual_acc[c] / visual_div);
        }
    }

    return ctx * w.wo;
}

void scatter_hidden(const ForwardState& state, HiddenStates& hs) {
    std::fill(hs.values.begin(), hs.values.end(), 0.0f);
    for (std::size_t i = 0; i < state.index_map.size(); ++i) {
        const std::size_t pos = state.index_map[i];
        for (std::size_t c = 0; c < hs.dim; ++c) {
            hs.values[pos * hs.dim + c] = state.x(static_cast<Eigen::Index>(i),
                                                  static_cast<Eigen::Index>(c));
        }
    }
}

double quantile(std::vector<double> sorted, double q) {
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace

void ModelConfig::check() const {
    if (num_layers == 0 || hidden == 0 || heads == 0 || intermediate == 0) {
        throw Error(ErrorKind::config, kModule, "model dimensions must all be >= 1");
    }
    if (hidden % heads != 0) {
        throw Error(ErrorKind::config, kModule,
                    "hidden " + std::to_string(hidden) + " is not divisible by heads " +
                        std::to_string(heads));
    }
}

ToyTransformer::ToyTransformer(const ModelConfig& cfg) : m_config(cfg) {
    cfg.check();
    const auto d = static_cast<Eigen::Index>(cfg.hidden);
    const auto m = static_cast<Eigen::Index>(cfg.intermediate);
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    const double sm = 1.0 / std::sqrt(static_cast<double>(cfg.intermediate));
    m_layers.reserve(cfg.num_layers);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        Rng rng(derive_seed(cfg.seed, i));
        Layer layer;
        layer.wq = random_matrix(d, d, sd, rng);
        layer.wk = random_matrix(d, d, sd, rng);
        layer.wv = random_matrix(d, d, sd, rng);
        layer.wo = random_matrix(d, d, sd, rng);
        layer.w_up = random_matrix(d, m, sd, rng);
        layer.w_down = random_matrix(m, d, sm, rng);
        m_layers.push_back(std::move(layer));
    }
}

std::uint64_t ToyTransformer::weight_checksum(std::size_t layer) const {
    const Layer& w = m_layers.at(layer);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Matrix* mat : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w_up, &w.w_down}) {
        for (Eigen::Index i = 0; i < mat->size(); ++i) {
            h ^= std::bit_cast<std::uint32_t>(mat->data()[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

ToyTransformer init_model(const ModelConfig& cfg) {
    return ToyTransformer(cfg);
}

ForwardState compress_sequence(const ForwardState& state, std::span<const std::size_t> retained,
                               const TokenLayout& layout) {
    std::vector<std::size_t> keep(retained.begin(), retained.end());
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());

    ForwardState out;
    out.layer = state.layer;
    out.index_map.reserve(keep.size());
    std::vector<Eigen::Index> rows;
    rows.reserve(keep.size());
    std::size_t j = 0;
    for (std::size_t pos : keep) {
        while (j < state.index_map.size() && state.index_map[j] < pos) {
            if (!layout.is_visual(state.index_map[j])) {
                throw Error(ErrorKind::contract, kModule,
                            "retained set drops non-visual token " +
                                std::to_string(state.index_map[j]));
            }
            ++j;
        }
        if (j == state.index_map.size() || state.index_map[j] != pos) {
            throw Error(ErrorKind::index, kModule,
                        "retained index " + std::to_string(pos) + " is not alive");
        }
        out.index_map.push_back(pos);
        rows.push_back(static_cast<Eigen::Index>(j));
        ++j;
    }
    for (; j < state.index_map.size(); ++j) {
        if (!layout.is_visual(state.index_map[j])) {
            throw Error(ErrorKind::contract, kModule,
                        "retained set drops non-visual token " +
                            std::to_string(state.index_map[j]));
        }
    }

    out.x.resize(static_cast<Eigen::Index>(rows.size()), state.x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) = state.x.row(rows[i]);
    }
    return out;
}

StrategyHook keep_all_hook() {
    return [](const StageContext& ctx) {
        return StageDecision{ctx.state.index_map, {}};
    };
}

ForwardResult forward(const ToyTransformer& model, const Matrix& embeddings,
                      const TokenLayout& layout, const PruneSchedule& schedule,
                      const StrategyHook& hook, const ForwardOptions& options) {
    const ModelConfig& cfg = model.config();
    layout.check();
    if (static_cast<std::size_t>(embeddings.rows()) != layout.seq_len ||
        static_cast<std::size_t>(embeddings.cols()) != cfg.hidden) {
        throw Error(ErrorKind::shape, kModule, "embeddings must be seq_len x hidden");
    }
    schedule.check(cfg.num_layers, layout.visual_count());
    if (!schedule.empty() && !hook) {
        throw Error(ErrorKind::config, kModule, "a non-empty schedule needs a strategy hook");
    }
    if (options.capture_hidden_layer && *options.capture_hidden_layer > cfg.num_layers) {
        throw Error(ErrorKind::config, kModule, "capture_hidden_layer beyond model depth");
    }

    const std::size_t L = layout.seq_len;
    ForwardResult result;
    result.trace.layout = layout;
    result.trace.num_layers = cfg.num_layers;
    result.trace.num_heads = cfg.heads;
    result.trace.query_reduction = options.capture;
    result.trace.model = {cfg.num_layers, cfg.hidden, cfg.intermediate, cfg.heads, 4};
    result.trace.last_text_rows.assign(cfg.num_layers * L, 0.0f);
    result.trace.last_visual_rows.assign(cfg.num_layers * L, 0.0f);
    if (options.capture_hidden_layer) {
        result.trace.hidden = HiddenStates{*options.capture_hidden_layer, cfg.hidden,
                                           std::vector<float>(L * cfg.hidden, 0.0f)};
    }

    ForwardState state;
    state.x = embeddings;
    state.index_map.resize(L);
    std::iota(state.index_map.begin(), state.index_map.end(), std::size_t{0});

    std::size_t next_stage = 0;
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        if (next_stage < schedule.stages.size() && schedule.stages[next_stage].layer == layer) {
            const ScheduleStage& stage = schedule.stages[next_stage];
            const auto t0 = Clock::now();
            StageContext ctx{next_stage, stage, layout, state,
                             layer == 0 ? std::span<const float>{}
                                        : result.trace.last_text_row(layer - 1),
                             layer == 0 ? std::span<const float>{}
                                        : result.trace.last_visual_row(layer - 1)};
            StageDecision decision = hook(ctx);
            ForwardState next = compress_sequence(state, decision.retained, layout);
            const std::size_t visual = next.index_map.size() - layout.text_count();
            if (visual != stage.retain) {
                throw Error(ErrorKind::contract, kModule,
                            "hook kept " + std::to_string(visual) + " visual tokens, stage " +
                                std::to_string(next_stage) + " requires " +
                                std::to_string(stage.retain));
            }
            if (decision.replacement.size() > 0) {
                if (static_cast<std::size_t>(decision.replacement.rows()) != visual ||
                    decision.replacement.cols() != next.x.cols()) {
                    throw Error(ErrorKind::shape, kModule,
                                "replacement rows must cover each retained visual token");
                }
                Eigen::Index r = 0;
                for (std::size_t i = 0; i < next.index_map.size(); ++i) {
                    if (layout.is_visual(next.index_map[i])) {
                        next.x.row(static_cast<Eigen::Index>(i)) = decision.replacement.row(r++);
                    }
                }
            }
            if (next.index_map.empty() || next.index_map.front() >= layout.image_end) {
                throw Error(ErrorKind::contract, kModule,
                            "no token before the end of the visual span remains to act as the "
                            "visual query");
            }
            state = std::move(next);
            result.selection_seconds +=
                std::chrono::duration<double>(Clock::now() - t0).count();
            ++next_stage;
        }
        if (options.capture_hidden_layer && *options.capture_hidden_layer == layer) {
            scatter_hidden(state, *result.trace.hidden);
        }

        const bool materialize = next_stage < schedule.stages.size() &&
                                 schedule.stages[next_stage].layer == layer + 1 &&
                                 schedule.stages[next_stage].materialize;
        result.materialized = result.materialized || materialize;

        const auto& w = model.layer(layer);
        CaptureTarget capture{
            std::span<float>(result.trace.last_text_rows).subspan(layer * L, L),
            std::span<float>(result.trace.last_visual_rows).subspan(layer * L, L),
            options.capture};
        state.x += attention(w, layer_norm(state.x), cfg.heads, materialize, state.index_map,
                             layout, capture);
        Matrix up = layer_norm(state.x) * w.w_up;
        up = up.unaryExpr([](float v) { return gelu(v); });
        state.x += up * w.w_down;

        result.tokens_per_layer.push_back(state.index_map.size());
        state.layer = layer + 1;
    }
    if (options.capture_hidden_layer && *options.capture_hidden_layer == cfg.num_layers) {
        scatter_hidden(state, *result.trace.hidden);
    }

    result.output = std::move(state.x);
    result.index_map = std::move(state.index_map);
    return result;
}

LatencyReport time_forward(const ToyTransformer& model, const Matrix& embeddings,
                           const TokenLayout& layout, const PruneSchedule& schedule,
                           const StrategyHook& hook, std::size_t repeats) {
    if (repeats < 3) {
        throw Error(ErrorKind::precondition, kModule,
                    "time_forward needs repeats >= 3, got " + std::to_string(repeats));
    }
    (void)forward(model, embeddings, layout, schedule, hook);

    LatencyReport report;
    report.repeats = repeats;
    std::vector<double> selection;
    for (std::size_t i = 0; i < repeats; ++i) {
        const auto t0 = Clock::now();
        ForwardResult r = forward(model, embeddings, layout, schedule, hook);
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        report.samples_ms.push_back(ms);
        selection.push_back(r.selection_seconds * 1e3);
        report.tokens_per_layer = std::move(r.tokens_per_layer);
        report.materialized = r.materialized;
    }
    report.median_ms = quantile(report.samples_ms, 0.5);
    report.p10_ms = quantile(report.samples_ms, 0.1);
    report.p90_ms = quantile(report.samples_ms, 0.9);
    report.selection_median_ms = quantile(selection, 0.5);
    return report;
}

Matrix random_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    return random_matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim), 1.0, rng);
}

}  // namespace tpl
