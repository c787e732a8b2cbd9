// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tpl/error.hpp"

namespace tpl {

namespace {

const char* const kModule = "harness-cli";

std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string render(const CsvCell& cell) {
    struct Visitor {
        std::string operator()(std::int64_t v) const { return std::to_string(v); }
        std::string operator()(std::uint64_t v) const { return std::to_string(v); }
        std::string operator()(double v) const {
            if (!std::isfinite(v)) {
                throw Error(ErrorKind::data, kModule, "cannot write a non-finite real to CSV");
            }
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            return buf;
        }
        std::string operator()(const std::string& v) const { return quote(v); }
    };
    return std::visit(Visitor{}, cell);
}

CsvCell optional_cell(const std::optional<double>& v) {
    if (v) return *v;
    return std::string();
}

std::uint64_t u64(std::size_t v) {
    return static_cast<std::uint64_t>(v);
}

}  // namespace

std::string format_csv(const CsvTable& table) {
    std::string out;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (i) out += ',';
        out += quote(table.header[i]);
    }
    out += '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw Error(ErrorKind::data, kModule, "CSV row width differs from the header");
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += render(row[i]);
        }
        out += '\n';
    }
    return out;
}

std::size_t emit_csv(const CsvTable& table, const std::filesystem::path& path) {
    const std::string text = format_csv(table);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, kModule, "cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) {
        throw Error(ErrorKind::io, kModule, "failed writing '" + path.string() + "'");
    }
    return text.size();
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool pending = false;  // a record has started
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            pending = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            pending = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            record.push_back(std::move(field));
            field.clear();
            records.push_back(std::move(record));
            record.clear();
            pending = false;
        } else {
            field += c;
            pending = true;
        }
    }
    if (quoted) {
        throw Error(ErrorKind::data, kModule, "unterminated quoted CSV field");
    }
    if (pending) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

CsvTable histogram_table(const PositionHistogram& hist, const TokenLayout& layout) {
    CsvTable t;
    t.header = {"position", "row", "col", "frequency", "samples"};
    for (std::size_t i = 0; i < hist.frequency.size(); ++i) {
        t.rows.push_back({u64(layout.image_start + i), u64(i / layout.grid_w),
                          u64(i % layout.grid_w), hist.frequency[i], u64(hist.samples)});
    }
    return t;
}

CsvTable uniformity_table(const UniformityReport& report) {
    CsvTable t;
    t.header = {"cell", "row", "col", "rows", "cols", "area", "count"};
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const auto& c = report.cells[i];
        t.rows.push_back({u64(i), u64(c.row), u64(c.col), u64(c.rows), u64(c.cols), u64(c.area()),
                          u64(report.counts[i])});
    }
    return t;
}

CsvTable cost_table(const std::vector<NamedCost>& costs) {
    CsvTable t;
    t.header = {"schedule", "stages",  "final_tokens", "flops_total", "flops_ratio",
                "kv_bytes", "kv_mib",  "tfrr",         "trr",         "latency_median_ms"};
    for (const auto& c : costs) {
        const auto& r = c.report;
        t.rows.push_back({c.name, c.schedule.to_string(), u64(r.final_tokens), r.flops_total,
                          r.flops_ratio, r.kv_bytes,
                          static_cast<double>(r.kv_bytes) / (1024.0 * 1024.0),
                          optional_cell(r.tfrr), optional_cell(r.trr),
                          optional_cell(r.latency_median_ms)});
    }
    return t;
}

CsvTable latency_table(const std::vector<NamedLatency>& runs) {
    CsvTable t;
    t.header = {"schedule", "stages",       "final_tokens", "repeats",
                "median_ms", "p10_ms",      "p90_ms",       "selection_median_ms",
                "materialized"};
    for (const auto& r : runs) {
        const auto& rep = r.report;
        t.rows.push_back({r.name, r.schedule.to_string(),
                          u64(rep.tokens_per_layer.empty() ? 0 : rep.tokens_per_layer.back()),
                          u64(rep.repeats), rep.median_ms, rep.p10_ms, rep.p90_ms,
                          rep.selection_median_ms,
                          std::string(rep.materialized ? "true" : "false")});
    }
    return t;
}

}  // namespace tpl
