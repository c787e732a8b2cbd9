// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace tpl {

// Distributions are written out here because the std:: ones are not specified
// bit-for-bit across standard libraries; mt19937_64 itself is.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_engine(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via Box-Muller.
    double normal();

    std::uint64_t next() { return m_engine(); }

private:
    std::mt19937_64 m_engine;
    double m_spare = 0.0;
    bool m_has_spare = false;
};

/// Mixes a base seed with a stream id so independent streams do not overlap.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace tpl
