// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tpl/bias_metrics.hpp"
#include "tpl/cost_model.hpp"
#include "tpl/transformer.hpp"

namespace tpl {

using CsvCell = std::variant<std::int64_t, std::uint64_t, double, std::string>;

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<CsvCell>> rows;
};

/// RFC 4180 quoting, '\n' line ends, reals at 9 significant digits. Throws a
/// data error on non-finite reals or ragged rows.
std::string format_csv(const CsvTable& table);

/// Writes format_csv(table) to `path`; returns bytes written.
std::size_t emit_csv(const CsvTable& table, const std::filesystem::path& path);

/// Splits RFC 4180 text into records of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

CsvTable histogram_table(const PositionHistogram& hist, const TokenLayout& layout);
CsvTable uniformity_table(const UniformityReport& report);

struct NamedCost {
    std::string name;
    PruneSchedule schedule;
    CostReport report;
};
CsvTable cost_table(const std::vector<NamedCost>& costs);

struct NamedLatency {
    std::string name;
    PruneSchedule schedule;
    LatencyReport report;
};
CsvTable latency_table(const std::vector<NamedLatency>& runs);

}  // namespace tpl
