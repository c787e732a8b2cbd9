// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tpl/error.hpp"

namespace tpl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitIo = 4;

int exit_code(ErrorKind kind);

/// Runs one CLI invocation. `args` excludes the program name. Errors are
/// reported on `err` as a single JSON line and mapped to an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "lo:hi:step" or a comma list into the grid of values.
std::vector<double> parse_grid(const std::string& text);

}  // namespace tpl::cli
