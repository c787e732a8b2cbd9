// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace tpl {

/// Decoder dimensions used for cost accounting and recorded in traces.
/// Defaults are the 7B-class LLaMA/Vicuna shape.
struct ModelDims {
    std::uint64_t layers = 32;
    std::uint64_t hidden = 4096;
    std::uint64_t intermediate = 11008;
    std::uint64_t heads = 32;
    std::uint64_t kv_bytes_per_elem = 2;

    bool operator==(const ModelDims&) const = default;
};

}  // namespace tpl
