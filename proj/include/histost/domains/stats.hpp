// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "histost/numerics/tensor.hpp"

namespace histost::dom {

struct RankSumResult {
    /// Mann-Whitney U of the first sample (midranks for ties).
    double u = 0.0;
    /// Two-sided p.
    double p = 1.0;
    bool exact = false;
    /// +1 when the first sample ranks higher on average, -1 lower, 0 equal.
    int direction = 0;
};

/// Wilcoxon rank-sum test. Exact permutation distribution of the rank sum
/// when min(|a|, |b|) <= 8, otherwise the normal approximation with tie and
/// continuity corrections.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_adjust(std::span<const double> p);

struct DERow {
    std::string gene;
    double stat = 0.0;
    double p = 1.0;
    double q = 1.0;
    int direction = 0;
};

/// Per-column rank-sum test of rows of `a` against rows of `b`, BH over the
/// columns.
std::vector<DERow> wilcoxon_de(const ad::Tensor& a, const ad::Tensor& b, const std::vector<std::string>& genes);

/// P[X >= hits] for X hypergeometric: `draw` items from a universe of
/// `universe` containing `set_size` marked items.
double ora_hypergeom(long hits, long set_size, long draw, long universe);

}  // namespace histost::dom
