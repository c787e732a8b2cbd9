// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tpl {

/// One real score per visual token, indexed in sequence order.
using ScoreVector = std::vector<double>;

namespace numeric {

/// Indices of the k largest values, ascending. Ties go to the smaller index.
std::vector<std::size_t> topk_stable(std::span<const double> scores, std::size_t k);

/// Indices of the k smallest values, ascending. Ties go to the smaller index.
std::vector<std::size_t> bottomk_stable(std::span<const double> scores, std::size_t k);

/// (x - min) / (max - min). A constant vector maps to 0.5 everywhere.
ScoreVector minmax_normalize(std::span<const double> values);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Max-subtracted softmax.
std::vector<double> row_softmax(std::span<const double> logits);

/// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace numeric
}  // namespace tpl
