// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "histost/data/slide.hpp"

namespace histost::data {

/// Context of one anchor spot. `members` index into the slide's spot list;
/// `offsets[i]` is the position of members[i] relative to the anchor, in grid
/// units (grid mode) or in units of the slide's median nearest-neighbour
/// distance (k-NN mode).
struct Neighborhood {
    std::size_t anchor = 0;
    std::vector<std::size_t> members;
    std::vector<std::array<double, 2>> offsets;

    std::size_t size() const { return members.size(); }
    /// Position of the anchor within `members`.
    std::size_t anchor_position() const;
};

struct NeighborhoodOptions {
    enum class Kind { Grid, Knn };
    Kind kind = Kind::Grid;
    /// Odd window side in grid mode (5 = 5x5; 1 = anchor only).
    int grid_size = 5;
    /// Members per anchor in k-NN mode, anchor included.
    std::size_t k = 9;

    static NeighborhoodOptions grid(int size = 5) { return {Kind::Grid, size, 9}; }
    static NeighborhoodOptions knn(std::size_t k = 9) { return {Kind::Knn, 5, k}; }
};

/// One neighbourhood per spot, in spot order.
///
/// Grid mode: members are the spots inside the window centred on the anchor,
/// truncated at tissue borders, ordered row-major by (d_row, d_col).
/// k-NN mode: the k nearest spots by Euclidean distance (the anchor first at
/// distance 0), ties broken by spot id.
std::vector<Neighborhood> build_neighborhoods(const SlideDataset& slide, const NeighborhoodOptions& options);

/// Median over spots of the distance to the nearest other spot (micrometres).
double median_nn_distance(const SlideDataset& slide);

}  // namespace histost::data
