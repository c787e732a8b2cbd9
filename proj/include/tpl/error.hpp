// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpl {

enum class ErrorKind {
    bounds,
    shape,
    degenerate_input,
    config,
    data,
    validation,
    format,
    version,
    truncated,
    checksum,
    index,
    contract,
    precondition,
    io,
};

std::string_view to_string(ErrorKind kind);

/// Library error. Carries a machine-readable kind and the name of the module
/// that raised it so the CLI can surface both.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& message)
        : std::runtime_error(message), m_kind(kind), m_module(std::move(module)) {}

    ErrorKind kind() const noexcept { return m_kind; }
    const std::string& module() const noexcept { return m_module; }

private:
    ErrorKind m_kind;
    std::string m_module;
};

}  // namespace tpl
