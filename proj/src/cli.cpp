// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "tpl/bias_metrics.hpp"
#include "tpl/cost_model.hpp"
#include "tpl/csv.hpp"
#include "tpl/numeric.hpp"
#include "tpl/rng.hpp"
#include "tpl/strategies.hpp"
#include "tpl/trace.hpp"
#include "tpl/transformer.hpp"

namespace tpl::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

const char* const kModule = "harness-cli";
const std::string_view kCommands[] = {"prune",    "sweep-alpha", "bias-report",   "cost-report",
                                      "simulate", "synth",       "validate-trace"};

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

// ---------------------------------------------------------------------------
// option parsing helpers

std::pair<std::size_t, std::size_t> parse_dims(const std::string& text, const char* flag) {
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        std::size_t used = 0;
        const auto a = std::stoull(text.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(text);
        const auto b = std::stoull(text.substr(x + 1), &used);
        if (used != text.size() - x - 1) throw std::invalid_argument(text);
        return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
    } catch (const std::logic_error&) {
        fail(ErrorKind::config, std::string(flag) + " expects ROWSxCOLS, got '" + text + "'");
    }
}

std::size_t default_jobs() {
    if (const char* env = std::getenv("TPL_JOBS")) {
        try {
            const auto v = std::stoull(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
        }
        fail(ErrorKind::config, std::string("TPL_JOBS must be a positive integer, got '") + env +
                                    "'");
    }
    return 1;
}

// Runs body(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure. Each index writes only its own output slot.
template <typename Body>
void parallel_for(std::size_t n, std::size_t jobs, Body body) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        fail(ErrorKind::io, "cannot create output directory '" + dir.string() + "'");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.close();
    if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// shared option groups

struct Common {
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    std::string out = ".";

    std::uint64_t require_seed() const {
        if (!seed) fail(ErrorKind::config, "--seed is required");
        return *seed;
    }
};

struct LayoutOptions {
    std::string grid = "24x24";
    std::size_t text_prefix = 8;
    std::size_t text_suffix = 24;

    TokenLayout layout() const {
        const auto [h, w] = parse_dims(grid, "--grid");
        TokenLayout lay = TokenLayout::make(text_prefix, h, w, text_suffix);
        lay.check();
        return lay;
    }
};

struct ModelOptions {
    std::size_t layers = 8;
    std::size_t hidden = 256;
    std::size_t heads = 8;
    std::size_t intermediate = 1024;

    ModelConfig config(std::uint64_t seed) const {
        ModelConfig cfg{layers, hidden, heads, intermediate, seed};
        cfg.check();
        return cfg;
    }
};

// Where attention traces come from.
struct InputOptions {
    std::vector<std::string> traces;
    bool synth = false;
    bool model = false;
    std::string bias = "monotone";
    double strength = 3.0;
    double noise = 1.0;
    std::size_t synth_layers = 2;
    std::size_t hidden_dim = 64;
    std::string capture = "last_token";
    LayoutOptions layout;
    ModelOptions model_opts;
};

struct PruneOptions {
    std::string strategy = "fastv";
    std::optional<std::size_t> retain;
    std::size_t layer = 2;
    std::string guidance = "last_text";
    std::string window = "4x4";
    std::size_t pool = 2;
    double alpha = 0.5;
    bool pooled_embeddings = false;

    PruneConfig config(std::uint64_t seed) const {
        PruneConfig c;
        c.strategy = parse_strategy(strategy);
        c.layer = layer;
        c.guidance = parse_guidance(guidance);
        const auto [wr, wc] = parse_dims(window, "--window");
        c.window = {wr, wc};
        c.pool = pool;
        c.alpha = alpha;
        c.seed = seed;
        c.pooled_embeddings = pooled_embeddings;
        if (retain) {
            c.retain = *retain;
        } else if (c.strategy != Strategy::pooling) {
            fail(ErrorKind::config, "--retain is required for strategy " + strategy);
        }
        return c;
    }
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
    app->add_option("--seed", c.seed, "Seed for every random draw");
    app->add_option("--jobs", c.jobs, "Worker threads for sweeps (default $TPL_JOBS or 1)")
        ->check(CLI::PositiveNumber);
    if (with_out) app->add_option("--out", c.out, "Output directory");
}

void add_layout(CLI::App* app, LayoutOptions& l) {
    app->add_option("--grid", l.grid, "Visual grid ROWSxCOLS");
    app->add_option("--text-prefix", l.text_prefix, "Text tokens before the image");
    app->add_option("--text-suffix", l.text_suffix, "Text tokens after the image");
}

void add_model(CLI::App* app, ModelOptions& m) {
    app->add_option("--model-layers", m.layers, "Toy model depth");
    app->add_option("--hidden", m.hidden, "Toy model hidden size");
    app->add_option("--heads", m.heads, "Toy model attention heads");
    app->add_option("--intermediate", m.intermediate, "Toy model feed-forward size");
}

void add_input(CLI::App* app, InputOptions& in) {
    app->add_option("--trace", in.traces, "tpl-trace/1 file (repeatable)");
    app->add_flag("--synth", in.synth, "Use synthetic traces");
    app->add_flag("--model", in.model, "Capture traces from the toy model");
    app->add_option("--bias", in.bias, "Synthetic bias: uniform|monotone|reverse|blocked");
    app->add_option("--strength", in.strength, "Synthetic bias strength");
    app->add_option("--noise", in.noise, "Synthetic log-weight noise sigma");
    app->add_option("--synth-layers", in.synth_layers, "Layers in a synthetic trace");
    app->add_option("--hidden-dim", in.hidden_dim, "Hidden size of synthetic traces (0: none)");
    app->add_option("--capture", in.capture, "Toy-model capture: last_token|mean_all_rows");
    add_layout(app, in.layout);
    add_model(app, in.model_opts);
}

void add_prune(CLI::App* app, PruneOptions& p) {
    app->add_option("--strategy", p.strategy,
                    "random|pooling|fastv|reverse_fastv|window_fastv|alpha_balance");
    app->add_option("--retain", p.retain, "Visual tokens to keep");
    app->add_option("--layer", p.layer, "First layer on the pruned sequence");
    app->add_option("--guidance", p.guidance, "last_text|last_visual");
    app->add_option("--window", p.window, "Window FastV window ROWSxCOLS");
    app->add_option("--pool", p.pool, "Pooling tile size");
    app->add_option("--alpha", p.alpha, "Importance weight for alpha_balance");
    app->add_flag("--pooled-embeddings", p.pooled_embeddings,
                  "Pooling: substitute the tile-mean embedding");
}

// Loads or generates `count` traces (count is ignored for --trace inputs).
std::vector<AttentionTrace> load_traces(const InputOptions& in, const Common& common,
                                        std::size_t count, std::size_t hidden_layer) {
    const int sources = static_cast<int>(!in.traces.empty()) + static_cast<int>(in.synth) +
                        static_cast<int>(in.model);
    if (sources != 1) {
        fail(ErrorKind::config, "choose exactly one input: --trace, --synth or --model");
    }
    std::vector<AttentionTrace> traces;
    if (!in.traces.empty()) {
        for (const auto& path : in.traces) traces.push_back(read_trace_file(path));
        return traces;
    }
    const std::uint64_t seed = common.require_seed();
    traces.resize(count);
    if (in.synth) {
        SynthConfig cfg;
        cfg.layout = in.layout.layout();
        cfg.bias_kind = parse_bias_kind(in.bias);
        cfg.bias_strength = in.strength;
        cfg.noise_sigma = in.noise;
        cfg.num_layers = in.synth_layers;
        cfg.hidden_dim = in.hidden_dim;
        cfg.hidden_layer = std::min(hidden_layer, in.synth_layers);
        parallel_for(count, common.jobs, [&](std::size_t i) {
            SynthConfig c = cfg;
            c.seed = derive_seed(seed, i);
            traces[i] = synthesize_trace(c);
        });
        return traces;
    }
    const TokenLayout layout = in.layout.layout();
    const ToyTransformer model(in.model_opts.config(seed));
    ForwardOptions opts;
    opts.capture = parse_query_reduction(in.capture);
    opts.capture_hidden_layer = std::min(hidden_layer, in.model_opts.layers);
    parallel_for(count, common.jobs, [&](std::size_t i) {
        const Matrix emb =
            random_embeddings(layout.seq_len, in.model_opts.hidden, derive_seed(seed, 1000 + i));
        traces[i] = forward(model, emb, layout, PruneSchedule{}, keep_all_hook(), opts).trace;
    });
    return traces;
}

Json layout_json(const TokenLayout& l) {
    return Json{{"seq_len", l.seq_len},
                {"image_start", l.image_start},
                {"image_end", l.image_end},
                {"grid_h", l.grid_h},
                {"grid_w", l.grid_w}};
}

Json config_json(const PruneConfig& c) {
    return Json{{"strategy", std::string(to_string(c.strategy))},
                {"retain", c.retain},
                {"layer", c.layer},
                {"guidance", std::string(to_string(c.guidance))},
                {"window", {c.window.rows, c.window.cols}},
                {"pool", c.pool},
                {"alpha", c.alpha},
                {"seed", c.seed},
                {"pooled_embeddings", c.pooled_embeddings}};
}

Json result_json(const PruneResult& r) {
    Json j;
    j["format"] = "tpl-prune-result/1";
    j["layout"] = layout_json(r.layout);
    j["config"] = config_json(r.config);
    j["retained"] = r.retained;
    j["retained_visual"] = r.visual_retained();
    if (r.config.strategy == Strategy::window_fastv) {
        const auto tiles = tile_grid(r.layout.grid_h, r.layout.grid_w, r.config.window.rows,
                                     r.config.window.cols);
        std::vector<std::size_t> counts(tiles.size(), 0);
        const auto kept = r.visual_retained();
        for (std::size_t t = 0; t < tiles.size(); ++t) {
            for (std::size_t m : tiles[t].members(r.layout.grid_w)) {
                counts[t] += static_cast<std::size_t>(std::binary_search(kept.begin(), kept.end(), m));
            }
        }
        j["window_counts"] = counts;
    }
    j["visual_scores"] = r.visual_scores ? Json(*r.visual_scores) : Json(nullptr);
    return j;
}

CsvTable mask_table(const PruneResult& r) {
    CsvTable t;
    t.header = {"position", "kind", "row", "col", "retained"};
    std::size_t k = 0;
    for (std::size_t pos = 0; pos < r.layout.seq_len; ++pos) {
        const bool kept = k < r.retained.size() && r.retained[k] == pos;
        if (kept) ++k;
        if (r.layout.is_visual(pos)) {
            const std::size_t v = pos - r.layout.image_start;
            t.rows.push_back({std::uint64_t{pos}, std::string("visual"),
                              std::uint64_t{v / r.layout.grid_w}, std::uint64_t{v % r.layout.grid_w},
                              std::uint64_t{kept}});
        } else {
            t.rows.push_back({std::uint64_t{pos}, std::string("text"), std::string(),
                              std::string(), std::uint64_t{kept}});
        }
    }
    return t;
}

CsvCell maybe_spearman(std::span<const double> x, std::span<const double> y) {
    try {
        return numeric::spearman(x, y);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate_input) throw;
        return std::string();
    }
}

std::size_t overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return both.size();
}

// Splits NAME=SPEC schedule arguments.
std::vector<std::pair<std::string, PruneSchedule>> parse_named_schedules(
    const std::vector<std::string>& items) {
    std::vector<std::pair<std::string, PruneSchedule>> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            fail(ErrorKind::config, "--schedule expects NAME=layer:retain[:m],..., got '" + item + "'");
        }
        out.emplace_back(item.substr(0, eq), PruneSchedule::parse(item.substr(eq + 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// subcommands

struct PruneCommand {
    Common common;
    InputOptions input;
    PruneOptions prune;

    void attach(CLI::App* app) {
        add_common(app, common);
        add_input(app, input);
        add_prune(app, prune);
    }

    void run(std::ostream& out) const {
        const auto traces = load_traces(input, common, 1, prune.layer);
        if (traces.size() != 1) fail(ErrorKind::config, "prune takes a single trace");
        const auto strategy = parse_strategy(prune.strategy);
        const std::uint64_t seed =
            strategy == Strategy::random ? common.require_seed() : common.seed.value_or(0);
        const PruneResult result = tpl::prune(traces.front(), prune.config(seed));

        const fs::path dir(common.out);
        ensure_dir(dir);
        write_text(dir / "result.json", result_json(result).dump(2) + "\n");
        emit_csv(mask_table(result), dir / "retained_mask.csv");
        out << Json{{"command", "prune"},
                    {"retained_visual", result.visual_retained().size()},
                    {"files", {(dir / "result.json").string(), (dir / "retained_mask.csv").string()}}}
                   .dump()
            << "\n";
    }
};

struct SweepAlphaCommand {
    Common common;
    InputOptions input;
    PruneOptions prune;
    std::string alphas = "0.0:1.0:0.1";

    void attach(CLI::App* app) {
        add_common(app, common);
        add_input(app, input);
        add_prune(app, prune);
        app->add_option("--alphas", alphas, "Alpha grid lo:hi:step or a comma list");
    }

    void run(std::ostream& out) const {
        const auto grid = parse_grid(alphas);
        const auto traces = load_traces(input, common, 1, prune.layer);
        if (traces.size() != 1) fail(ErrorKind::config, "sweep-alpha takes a single trace");
        const AttentionTrace& trace = traces.front();

        PruneConfig base = prune.config(common.seed.value_or(0));
        base.strategy = Strategy::alpha_balance;
        const auto attention = fastv_scores(trace, base.layer, base.guidance);

        // Reference rankings for the agreement statistics.
        if (!trace.hidden) fail(ErrorKind::config, "sweep-alpha needs hidden states");
        const auto hidden = HiddenView::of(*trace.hidden, trace.layout.seq_len);
        const auto uniqueness =
            alpha_scores(attention, hidden, trace.layout, trace.layout.seq_len - 1, 0.0);
        const auto top_attention = numeric::topk_stable(attention, base.retain);
        const auto top_unique = numeric::topk_stable(uniqueness, base.retain);

        std::vector<PruneResult> results(grid.size());
        parallel_for(grid.size(), common.jobs, [&](std::size_t i) {
            PruneConfig c = base;
            c.alpha = grid[i];
            results[i] = tpl::prune(trace, c);
        });

        CsvTable table;
        table.header = {"alpha", "retained_visual", "overlap_attention_top", "overlap_uniqueness_top",
                        "spearman_vs_attention", "spearman_vs_uniqueness"};
        Json sets = Json::array();
        const double R = static_cast<double>(std::max<std::size_t>(base.retain, 1));
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto kept = results[i].visual_retained();
            const auto& scores = *results[i].visual_scores;
            table.rows.push_back({grid[i], std::uint64_t{kept.size()},
                                  static_cast<double>(overlap(kept, top_attention)) / R,
                                  static_cast<double>(overlap(kept, top_unique)) / R,
                                  maybe_spearman(scores, attention),
                                  maybe_spearman(scores, uniqueness)});
            sets.push_back(Json{{"alpha", grid[i]}, {"retained_visual", kept}});
        }
        const fs::path dir(common.out);
        ensure_dir(dir);
        emit_csv(table, dir / "sweep_alpha.csv");
        write_text(dir / "sweep_alpha.json",
                   Json{{"layout", layout_json(trace.layout)},
                        {"config", config_json(base)},
                        {"sweep", sets}}
                           .dump(2) +
                       "\n");
        out << Json{{"command", "sweep-alpha"}, {"rows", grid.size()}}.dump() << "\n";
    }
};

struct BiasReportCommand {
    Common common;
    InputOptions input;
    PruneOptions prune;
    std::string strategies = "fastv,random,window_fastv";
    std::size_t samples = 1000;
    std::string cell = "6x6";

    void attach(CLI::App* app) {
        add_common(app, common);
        add_input(app, input);
        add_prune(app, prune);
        app->add_option("--strategies", strategies, "Comma-separated strategies to compare");
        app->add_option("--samples", samples, "Synthetic or toy-model traces to draw")
            ->check(CLI::PositiveNumber);
        app->add_option("--cell", cell, "Uniformity cell ROWSxCOLS");
    }

    void run(std::ostream& out) const {
        const auto traces = load_traces(input, common, samples, prune.layer);
        const TokenLayout layout = traces.front().layout;
        const auto [ch, cw] = parse_dims(cell, "--cell");
        if (ch == 0 || cw == 0) fail(ErrorKind::config, "--cell dims must be >= 1");

        std::vector<std::string> names;
        for (std::size_t start = 0; start <= strategies.size();) {
            const auto comma = std::min(strategies.find(',', start), strategies.size());
            if (comma > start) names.push_back(strategies.substr(start, comma - start));
            start = comma + 1;
        }
        if (names.empty()) fail(ErrorKind::config, "--strategies is empty");

        const std::uint64_t seed = common.seed.value_or(0);
        CsvTable hist_table;
        hist_table.header = {"strategy", "position", "row", "col", "frequency"};
        CsvTable summary;
        summary.header = {"strategy",      "samples",      "retained_visual",
                          "spearman",      "entropy_mean", "entropy_min",
                          "max_over_expected_mean"};
        CsvTable cells;
        cells.header = {"strategy", "cell", "row", "col", "rows", "cols", "area", "mean_count"};

        for (const auto& name : names) {
            const PruneConfig base = [&] {
                PruneOptions p = prune;
                p.strategy = name;
                if (parse_strategy(name) == Strategy::random) common.require_seed();
                return p.config(seed);
            }();
            std::vector<PruneResult> results(traces.size());
            std::vector<UniformityReport> reports(traces.size());
            parallel_for(traces.size(), common.jobs, [&](std::size_t i) {
                PruneConfig c = base;
                c.seed = derive_seed(seed, i);
                results[i] = tpl::prune(traces[i], c);
                reports[i] = uniformity_entropy(results[i], layout, ch, cw);
            });

            const auto hist = retention_frequency(results, layout);
            for (std::size_t v = 0; v < hist.frequency.size(); ++v) {
                hist_table.rows.push_back({name, std::uint64_t{layout.image_start + v},
                                           std::uint64_t{v / layout.grid_w},
                                           std::uint64_t{v % layout.grid_w}, hist.frequency[v]});
            }
            CsvCell corr = std::string();
            try {
                corr = position_bias_correlation(hist);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::degenerate_input) throw;
            }
            double e_sum = 0.0, e_min = 1.0, moe = 0.0;
            std::vector<double> mean_counts(reports.front().cells.size(), 0.0);
            for (const auto& r : reports) {
                e_sum += r.entropy;
                e_min = std::min(e_min, r.entropy);
                moe += r.max_over_expected;
                for (std::size_t c = 0; c < r.counts.size(); ++c) {
                    mean_counts[c] += static_cast<double>(r.counts[c]);
                }
            }
            const double n = static_cast<double>(reports.size());
            summary.rows.push_back({name, std::uint64_t{results.size()},
                                    std::uint64_t{results.front().visual_retained().size()}, corr,
                                    e_sum / n, e_min, moe / n});
            const auto& cells_ref = reports.front().cells;
            for (std::size_t c = 0; c < cells_ref.size(); ++c) {
                const auto& g = cells_ref[c];
                cells.rows.push_back({name, std::uint64_t{c}, std::uint64_t{g.row},
                                      std::uint64_t{g.col}, std::uint64_t{g.rows},
                                      std::uint64_t{g.cols}, std::uint64_t{g.area()},
                                      mean_counts[c] / n});
            }
        }

        CsvTable attention;
        attention.header = {"position", "row", "col", "mean_attention"};
        const auto mean = attention_by_position(traces, layout, prune.layer,
                                                parse_guidance(prune.guidance));
        for (std::size_t v = 0; v < mean.size(); ++v) {
            attention.rows.push_back({std::uint64_t{layout.image_start + v},
                                      std::uint64_t{v / layout.grid_w},
                                      std::uint64_t{v % layout.grid_w}, mean[v]});
        }

        const fs::path dir(common.out);
        ensure_dir(dir);
        emit_csv(hist_table, dir / "position_histogram.csv");
        emit_csv(attention, dir / "attention_by_position.csv");
        emit_csv(summary, dir / "bias_summary.csv");
        emit_csv(cells, dir / "uniformity.csv");
        out << Json{{"command", "bias-report"}, {"samples", traces.size()},
                    {"strategies", names}}
                   .dump()
            << "\n";
    }
};

struct CostReportCommand {
    Common common;
    std::size_t visual = 2880;
    std::size_t text = 64;
    std::size_t layers = 32;
    std::size_t hidden = 4096;
    std::size_t intermediate = 11008;
    std::size_t heads = 32;
    std::size_t kv_bytes = 2;
    double tacr = 1.0;
    std::vector<std::string> schedules;

    void attach(CLI::App* app) {
        add_common(app, common);
        app->add_option("--visual", visual, "Visual tokens before pruning");
        app->add_option("--text", text, "Non-visual tokens");
        app->add_option("--model-layers", layers, "Decoder layers");
        app->add_option("--hidden", hidden, "Hidden size");
        app->add_option("--intermediate", intermediate, "Feed-forward size");
        app->add_option("--heads", heads, "Attention heads");
        app->add_option("--kv-bytes", kv_bytes, "Bytes per cached K/V element");
        app->add_option("--tacr", tacr, "Training-aware compression ratio");
        app->add_option("--schedule", schedules, "NAME=layer:retain[:m],... (repeatable)");
    }

    void run(std::ostream& out) const {
        const ModelDims dims{layers, hidden, intermediate, heads, kv_bytes};
        if (visual == 0) fail(ErrorKind::config, "--visual must be >= 1");
        TokenLayout layout;
        layout.seq_len = visual;
        layout.image_start = 0;
        layout.image_end = visual;
        layout.grid_h = 1;
        layout.grid_w = visual;

        auto named = parse_named_schedules(schedules);
        if (named.empty()) named.emplace_back("vanilla", PruneSchedule{});
        std::vector<NamedCost> costs;
        for (auto& [name, sched] : named) {
            costs.push_back({name, sched, cost_report(sched, dims, layout, text, tacr)});
        }
        const fs::path dir(common.out);
        ensure_dir(dir);
        emit_csv(cost_table(costs), dir / "cost_report.csv");
        out << Json{{"command", "cost-report"}, {"schedules", costs.size()}}.dump() << "\n";
    }
};

struct SimulateCommand {
    Common common;
    LayoutOptions layout_opts;
    ModelOptions model_opts;
    PruneOptions prune;
    std::vector<std::string> schedules;
    std::size_t repeats = 20;

    void attach(CLI::App* app) {
        add_common(app, common);
        add_layout(app, layout_opts);
        add_model(app, model_opts);
        add_prune(app, prune);
        app->add_option("--schedule", schedules, "NAME=layer:retain[:m],... (repeatable)");
        app->add_option("--repeats", repeats, "Timed passes per schedule");
    }

    void run(std::ostream& out) const {
        const std::uint64_t seed = common.require_seed();
        const TokenLayout layout = layout_opts.layout();
        const ToyTransformer model(model_opts.config(seed));
        const Matrix emb = random_embeddings(layout.seq_len, model_opts.hidden, derive_seed(seed, 7));

        auto named = parse_named_schedules(schedules);
        if (named.empty()) named.emplace_back("unpruned", PruneSchedule{});
        PruneOptions p = prune;
        if (!p.retain) p.retain = 0;
        const StrategyHook hook = make_strategy_hook(p.config(seed));

        const ModelDims dims{model_opts.layers, model_opts.hidden, model_opts.intermediate,
                             model_opts.heads, 4};
        std::vector<NamedLatency> runs;
        std::vector<NamedCost> costs;
        Json detail = Json::array();
        for (auto& [name, sched] : named) {
            // Serial on purpose: timing runs never share the machine.
            LatencyReport rep = time_forward(model, emb, layout, sched, hook, repeats);
            CostReport cost = cost_report(sched, dims, layout, layout.text_count());
            cost.latency_median_ms = rep.median_ms;
            detail.push_back(Json{{"schedule", name},
                                  {"stages", sched.to_string()},
                                  {"tokens_per_layer", rep.tokens_per_layer},
                                  {"samples_ms", rep.samples_ms},
                                  {"materialized", rep.materialized}});
            runs.push_back({name, sched, std::move(rep)});
            costs.push_back({name, sched, cost});
        }
        const fs::path dir(common.out);
        ensure_dir(dir);
        emit_csv(latency_table(runs), dir / "latency.csv");
        emit_csv(cost_table(costs), dir / "simulate_cost.csv");
        write_text(dir / "simulate.json",
                   Json{{"deterministic", false},
                        {"layout", layout_json(layout)},
                        {"runs", detail}}
                           .dump(2) +
                       "\n");
        out << Json{{"command", "simulate"}, {"schedules", runs.size()}}.dump() << "\n";
    }
};

struct SynthCommand {
    Common common;
    InputOptions input;
    std::size_t hidden_layer = 2;
    std::string path;

    void attach(CLI::App* app) {
        app->add_option("--seed", common.seed, "Seed for every random draw");
        app->add_option("--bias", input.bias, "uniform|monotone|reverse|blocked");
        app->add_option("--strength", input.strength, "Bias strength");
        app->add_option("--noise", input.noise, "Log-weight noise sigma");
        app->add_option("--synth-layers", input.synth_layers, "Layers in the trace");
        app->add_option("--hidden-dim", input.hidden_dim, "Hidden size (0: none)");
        app->add_option("--hidden-layer", hidden_layer, "Layer the hidden states enter");
        add_layout(app, input.layout);
        app->add_option("--out", path, "Trace file to write")->required();
    }

    void run(std::ostream& out) const {
        SynthConfig cfg;
        cfg.layout = input.layout.layout();
        cfg.bias_kind = parse_bias_kind(input.bias);
        cfg.bias_strength = input.strength;
        cfg.noise_sigma = input.noise;
        cfg.seed = common.require_seed();
        cfg.num_layers = input.synth_layers;
        cfg.hidden_dim = input.hidden_dim;
        cfg.hidden_layer = hidden_layer;
        const std::size_t bytes = write_trace_file(synthesize_trace(cfg), path);
        out << Json{{"command", "synth"}, {"path", path}, {"bytes", bytes}}.dump() << "\n";
    }
};

struct ValidateCommand {
    std::string path;

    void attach(CLI::App* app) {
        app->add_option("trace", path, "Trace file")->required();
    }

    int run(std::ostream& out) const {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
        const AttentionTrace trace = read_trace_unvalidated(in);
        const auto violations = validate_trace(trace);
        for (const auto& v : violations) {
            out << Json{{"violation", v.where}, {"message", v.what}}.dump() << "\n";
        }
        out << Json{{"command", "validate-trace"},
                    {"valid", violations.empty()},
                    {"violations", violations.size()}}
                   .dump()
            << "\n";
        return violations.empty() ? kExitOk : kExitData;
    }
};

// Expands `--spec file.json` into ordinary flags. Flags already on the
// command line win.
std::vector<std::string> expand_spec(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::optional<std::string> spec_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--spec") {
            if (i + 1 >= args.size()) fail(ErrorKind::config, "--spec needs a file");
            spec_path = args[++i];
        } else if (args[i].starts_with("--spec=")) {
            spec_path = args[i].substr(7);
        } else {
            out.push_back(args[i]);
        }
    }
    if (!spec_path) return out;

    std::ifstream in(*spec_path);
    if (!in) fail(ErrorKind::io, "cannot open spec file '" + *spec_path + "'");
    Json spec;
    try {
        spec = Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorKind::config, "spec file is not valid JSON: " + std::string(e.what()));
    }
    if (!spec.is_object()) fail(ErrorKind::config, "spec file must hold a JSON object");

    const bool has_command = std::any_of(out.begin(), out.end(), [](const std::string& a) {
        return std::find(std::begin(kCommands), std::end(kCommands), a) != std::end(kCommands);
    });
    if (!has_command) {
        if (!spec.contains("command") || !spec["command"].is_string()) {
            fail(ErrorKind::config, "no subcommand given on the command line or in the spec");
        }
        out.insert(out.begin(), spec["command"].get<std::string>());
    }
    auto on_command_line = [&](const std::string& flag) {
        return std::any_of(out.begin(), out.end(), [&](const std::string& a) {
            return a == flag || a.starts_with(flag + "=");
        });
    };
    auto scalar = [](const Json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    };
    for (const auto& [key, value] : spec.items()) {
        if (key == "command") continue;
        const std::string flag = "--" + key;
        if (on_command_line(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                out.push_back(flag);
                out.push_back(scalar(v));
            }
        } else if (!value.is_null()) {
            out.push_back(flag);
            out.push_back(scalar(value));
        }
    }
    return out;
}

void report_error(std::ostream& err, std::string_view kind, std::string_view module,
                  std::string_view message) {
    err << Json{{"error", kind}, {"module", module}, {"message", message}}.dump() << "\n";
}

}  // namespace

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config:
        case ErrorKind::bounds:
        case ErrorKind::precondition:
            return kExitConfig;
        case ErrorKind::io:
            return kExitIo;
        default:
            return kExitData;
    }
}

std::vector<double> parse_grid(const std::string& text) {
    auto number = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
            return v;
        } catch (const std::logic_error&) {
            fail(ErrorKind::config, "bad number '" + s + "' in grid '" + text + "'");
        }
    };
    std::vector<double> values;
    const auto c1 = text.find(':');
    if (c1 != std::string::npos) {
        const auto c2 = text.find(':', c1 + 1);
        if (c2 == std::string::npos) fail(ErrorKind::config, "grid expects lo:hi:step");
        const double lo = number(text.substr(0, c1));
        const double hi = number(text.substr(c1 + 1, c2 - c1 - 1));
        const double step = number(text.substr(c2 + 1));
        if (!(step > 0.0) || hi < lo) fail(ErrorKind::config, "grid needs step > 0 and hi >= lo");
        const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
        for (std::size_t i = 0; i < count; ++i) {
            // Rounding to 1e-12 keeps 0.1-steps printable as 0.3 rather than 0.30000000000000004.
            const double v = std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12;
            values.push_back(std::min(v, hi));
        }
    } else {
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto comma = std::min(text.find(',', start), text.size());
            values.push_back(number(text.substr(start, comma - start)));
            start = comma + 1;
        }
    }
    return values;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Token pruning laboratory", "tpl"};
    app.require_subcommand(1);

    PruneCommand prune_cmd;
    SweepAlphaCommand sweep_cmd;
    BiasReportCommand bias_cmd;
    CostReportCommand cost_cmd;
    SimulateCommand sim_cmd;
    SynthCommand synth_cmd;
    ValidateCommand validate_cmd;

    auto* prune_app = app.add_subcommand("prune", "Run one strategy over a trace");
    auto* sweep_app = app.add_subcommand("sweep-alpha", "Sweep the importance/redundancy balance");
    auto* bias_app = app.add_subcommand("bias-report", "Position-bias and uniformity statistics");
    auto* cost_app = app.add_subcommand("cost-report", "Analytic FLOPs / KV-cache costs");
    auto* sim_app = app.add_subcommand("simulate", "Toy-model forward latency per schedule");
    auto* synth_app = app.add_subcommand("synth", "Write a synthetic trace");
    auto* validate_app = app.add_subcommand("validate-trace", "Check a trace file");

    try {
        const std::size_t jobs = default_jobs();
        for (Common* c : {&prune_cmd.common, &sweep_cmd.common, &bias_cmd.common, &cost_cmd.common,
                          &sim_cmd.common}) {
            c->jobs = jobs;
        }
        prune_cmd.attach(prune_app);
        sweep_cmd.attach(sweep_app);
        bias_cmd.attach(bias_app);
        cost_cmd.attach(cost_app);
        sim_cmd.attach(sim_app);
        synth_cmd.attach(synth_app);
        validate_cmd.attach(validate_app);

        std::vector<std::string> args = expand_spec(raw_args);
        std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
        try {
            app.parse(args);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            report_error(err, "config", kModule, e.what());
            return kExitConfig;
        }

        if (prune_app->parsed()) prune_cmd.run(out);
        if (sweep_app->parsed()) sweep_cmd.run(out);
        if (bias_app->parsed()) bias_cmd.run(out);
        if (cost_app->parsed()) cost_cmd.run(out);
        if (sim_app->parsed()) sim_cmd.run(out);
        if (synth_app->parsed()) synth_cmd.run(out);
        if (validate_app->parsed()) return validate_cmd.run(out);
        return kExitOk;
    } catch (const Error& e) {
        report_error(err, to_string(e.kind()), e.module(), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        report_error(err, "io", kModule, e.what());
        return kExitIo;
    }
}

}  // namespace tpl::cli
