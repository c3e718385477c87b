// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <vector>

#include "histost/domains/cluster.hpp"

namespace histost::dom {

using Coords = std::vector<std::array<double, 2>>;

/// Co-occurrence of predicted (rows) and true (columns) labels after
/// remapping both to dense ids in order of first appearance.
struct Contingency {
    std::vector<std::vector<long>> table;
    std::vector<long> pred_sizes;
    std::vector<long> truth_sizes;
    long n = 0;
    /// Unordered pairs: same pred & same truth, same pred & different truth,
    /// different pred & same truth, different both.
    double same_same = 0, same_diff = 0, diff_same = 0, diff_diff = 0;
};

Contingency contingency(std::span<const int> pred, std::span<const int> truth);

struct ExternalMetrics {
    double nmi = 0, ari = 0, fmi = 0, hom = 0, com = 0;
};

/// NMI (arithmetic-mean normalization), ARI, FMI, homogeneity and
/// completeness from one contingency table, natural-log entropies.
/// Degenerate cases: NMI with H(P)+H(T)=0 -> 0, HOM with H(T)=0 -> 0,
/// COM with H(P)=0 -> 1, ARI with zero denominator -> 1, FMI with zero
/// denominator -> 0.
ExternalMetrics external_metrics(std::span<const int> pred, std::span<const int> truth);

/// Coordinates are rescaled so the mean nearest-neighbour distance over all
/// spots is 1; the result is the mean distance from each spot to its nearest
/// same-cluster spot. Spots in singleton clusters are skipped with a warning.
double chaos(std::span<const int> labels, const Coords& coords);

/// Fraction of spots for which at least `threshold` of the `k` nearest other
/// spots (Euclidean, ties by index) carry a different label.
double pas(std::span<const int> labels, const Coords& coords, std::size_t k = 10, std::size_t threshold = 6);

/// Mean silhouette with Euclidean distance between rows of `x`; points in
/// singleton clusters score 0.
double asw(std::span<const int> labels, const ad::Tensor& x);

}  // namespace histost::dom
