// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpl/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tpl/error.hpp"

namespace tpl::numeric {

namespace {

const char* const kModule = "numeric-kernels";

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::data, kModule, std::string(what) + ": non-finite entry");
        }
    }
}

template <typename Better>
std::vector<std::size_t> select_k(std::span<const double> scores, std::size_t k, Better better,
                                  const char* what) {
    if (k > scores.size()) {
        throw Error(ErrorKind::bounds, kModule,
                    std::string(what) + ": k=" + std::to_string(k) + " exceeds size " +
                        std::to_string(scores.size()));
    }
    require_finite(scores, what);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Total order: better score first, then smaller index.
    auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return better(scores[a], scores[b]);
        }
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

std::vector<std::size_t> topk_stable(std::span<const double> scores, std::size_t k) {
    return select_k(scores, k, std::greater<double>{}, "topk_stable");
}

std::vector<std::size_t> bottomk_stable(std::span<const double> scores, std::size_t k) {
    return select_k(scores, k, std::less<double>{}, "bottomk_stable");
}

ScoreVector minmax_normalize(std::span<const double> values) {
    if (values.empty()) {
        throw Error(ErrorKind::bounds, kModule, "minmax_normalize: empty vector");
    }
    require_finite(values, "minmax_normalize");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    ScoreVector out(values.size());
    if (hi == lo) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = (values[i] - lo) / range;
    }
    return out;
}

namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::shape, kModule,
                    "cosine_similarity: dimension mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    return cosine_impl(a, b);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    return cosine_impl(a, b);
}

std::vector<double> row_softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw Error(ErrorKind::bounds, kModule, "row_softmax: empty vector");
    }
    require_finite(logits, "row_softmax");
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] == values[order[i]]) {
            ++j;
        }
        // positions i..j-1 hold equal values; 1-based ranks i+1..j
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            ranks[order[t]] = shared;
        }
        i = j;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw Error(ErrorKind::degenerate_input, kModule, "spearman: length mismatch");
    }
    if (x.size() < 2) {
        throw Error(ErrorKind::degenerate_input, kModule, "spearman: need at least two samples");
    }
    require_finite(x, "spearman");
    require_finite(y, "spearman");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double dx = rx[i] - mean;
        const double dy = ry[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw Error(ErrorKind::degenerate_input, kModule, "spearman: constant input");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace tpl::numeric
