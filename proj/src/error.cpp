// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/error.hpp"

namespace tpl {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::bounds: return "bounds";
        case ErrorKind::shape: return "shape";
        case ErrorKind::degenerate_input: return "degenerate_input";
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::validation: return "validation";
        case ErrorKind::format: return "format";
        case ErrorKind::version: return "version";
        case ErrorKind::truncated: return "truncated";
        case ErrorKind::checksum: return "checksum";
        case ErrorKind::index: return "index";
        case ErrorKind::contract: return "contract";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace tpl
