// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "histost/numerics/tensor.hpp"

namespace histost::dom {

using Labels = std::vector<int>;

struct ClusterResult {
    Labels labels;
    std::size_t k = 0;
    double inertia = 0.0;
    std::uint64_t seed = 0;
    std::size_t n_init = 0;
    /// k x d
    ad::Tensor centroids;
};

struct KMeansOptions {
    std::size_t n_init = 10;
    std::size_t max_iter = 300;
    /// Stop when no centroid moves farther than this (Euclidean).
    double tol = 1e-6;
};

/// k-means++ seeding plus Lloyd iterations, best of n_init restarts by
/// inertia (ties keep the earlier restart). Restart r draws from
/// derive_seed(seed, "kmeans", r). An emptied cluster is re-seeded at the
/// point farthest from its assigned centroid.
ClusterResult kmeans(const ad::Tensor& x, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Projection of the centered rows of `x` onto the leading `components`
/// principal axes (n x components). Axis signs are fixed so that the
/// largest-magnitude loading of each axis is positive.
ad::Tensor pca_project(const ad::Tensor& x, std::size_t components);

/// Rows of `x` standardized per column to zero mean and unit variance;
/// constant columns become zero.
ad::Tensor standardize_columns(const ad::Tensor& x);

}  // namespace histost::dom
