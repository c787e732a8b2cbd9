// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/schedule.hpp"

#include <charconv>

#include "tpl/error.hpp"

namespace tpl {

namespace {

const char* const kModule = "toy-transformer";

std::size_t parse_count(std::string_view s, std::string_view whole) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error(ErrorKind::config, kModule,
                    "bad schedule stage '" + std::string(whole) + "', expected layer:retain[:m]");
    }
    return v;
}

}  // namespace

std::size_t PruneSchedule::visual_at(std::size_t layer, std::size_t visual_count) const {
    std::size_t live = visual_count;
    for (const auto& st : stages) {
        if (st.layer <= layer) live = st.retain;
    }
    return live;
}

bool PruneSchedule::any_materialized() const noexcept {
    for (const auto& st : stages) {
        if (st.materialize) return true;
    }
    return false;
}

void PruneSchedule::check(std::size_t num_layers, std::size_t visual_count) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        if (st.layer >= num_layers) {
            throw Error(ErrorKind::config, kModule,
                        "stage " + std::to_string(i) + " at layer " + std::to_string(st.layer) +
                            " exceeds model depth " + std::to_string(num_layers));
        }
        if (i > 0 && st.layer <= stages[i - 1].layer) {
            throw Error(ErrorKind::config, kModule, "stage layers must be strictly increasing");
        }
        const std::size_t prev = i == 0 ? visual_count : stages[i - 1].retain;
        if (st.retain > prev) {
            throw Error(ErrorKind::config, kModule,
                        "stage " + std::to_string(i) + " retains " + std::to_string(st.retain) +
                            " visual tokens but only " + std::to_string(prev) + " are alive");
        }
    }
}

PruneSchedule PruneSchedule::parse(std::string_view text) {
    PruneSchedule sched;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const std::string_view item = text.substr(0, comma);
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);

        const auto c1 = item.find(':');
        if (c1 == std::string_view::npos) {
            throw Error(ErrorKind::config, kModule,
                        "bad schedule stage '" + std::string(item) + "', expected layer:retain[:m]");
        }
        ScheduleStage st;
        st.layer = parse_count(item.substr(0, c1), item);
        std::string_view rest = item.substr(c1 + 1);
        const auto c2 = rest.find(':');
        if (c2 != std::string_view::npos) {
            if (rest.substr(c2 + 1) != "m") {
                throw Error(ErrorKind::config, kModule,
                            "bad schedule stage flag in '" + std::string(item) + "'");
            }
            st.materialize = true;
            rest = rest.substr(0, c2);
        }
        st.retain = parse_count(rest, item);
        sched.stages.push_back(st);
    }
    return sched;
}

std::string PruneSchedule::to_string() const {
    std::string out;
    for (const auto& st : stages) {
        if (!out.empty()) out += ',';
        out += std::to_string(st.layer) + ':' + std::to_string(st.retain);
        if (st.materialize) out += ":m";
    }
    return out;
}

}  // namespace tpl
