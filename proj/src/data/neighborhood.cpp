// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "histost/common/errors.hpp"
#include "histost/data/neighborhood.hpp"

namespace histost::data {

std::size_t Neighborhood::anchor_position() const {
    for (std::size_t i = 0; i < members.size(); ++i)
        if (members[i] == anchor) return i;
    throw ContractViolation("neighborhood does not contain its anchor");
}

double median_nn_distance(const SlideDataset& slide) {
    HISTOST_REQUIRE(slide.mode == CoordinateMode::Continuous, "median_nn_distance: slide must use continuous coordinates");
    HISTOST_REQUIRE(slide.size() >= 2, "median_nn_distance: need at least two spots");
    std::vector<double> nn(slide.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < slide.size(); ++i)
        for (std::size_t j = 0; j < slide.size(); ++j) {
            if (i == j) continue;
            const double d = std::hypot(slide.spots[i].x_um - slide.spots[j].x_um, slide.spots[i].y_um - slide.spots[j].y_um);
            nn[i] = std::min(nn[i], d);
        }
    std::sort(nn.begin(), nn.end());
    const std::size_t n = nn.size();
    return n % 2 ? nn[n / 2] : 0.5 * (nn[n / 2 - 1] + nn[n / 2]);
}

namespace {

std::vector<Neighborhood> grid_neighborhoods(const SlideDataset& slide, int grid_size) {
    HISTOST_REQUIRE(grid_size >= 1 && grid_size % 2 == 1, "build_neighborhoods: grid size must be odd and positive");
    std::map<std::pair<int, int>, std::size_t> at;
    for (std::size_t i = 0; i < slide.size(); ++i) {
        if (!at.emplace(std::make_pair(slide.spots[i].row, slide.spots[i].col), i).second) {
            throw FormatError("build_neighborhoods: two spots share grid cell of " + slide.spots[i].id);
        }
    }
    const int r = grid_size / 2;
    std::vector<Neighborhood> out;
    out.reserve(slide.size());
    for (std::size_t a = 0; a < slide.size(); ++a) {
        Neighborhood nb;
        nb.anchor = a;
        for (int dr = -r; dr <= r; ++dr)
            for (int dc = -r; dc <= r; ++dc) {
                auto it = at.find({slide.spots[a].row + dr, slide.spots[a].col + dc});
                if (it == at.end()) continue;
                nb.members.push_back(it->second);
                nb.offsets.push_back({static_cast<double>(dr), static_cast<double>(dc)});
            }
        out.push_back(std::move(nb));
    }
    return out;
}

std::vector<Neighborhood> knn_neighborhoods(const SlideDataset& slide, std::size_t k) {
    HISTOST_REQUIRE(k >= 1, "build_neighborhoods: k must be at least 1");
    HISTOST_REQUIRE(slide.size() >= k, "build_neighborhoods: slide has fewer spots than k");
    const double unit = slide.size() >= 2 ? median_nn_distance(slide) : 1.0;
    HISTOST_REQUIRE(unit > 0.0, "build_neighborhoods: median nearest-neighbour distance is zero");
    std::vector<Neighborhood> out;
    out.reserve(slide.size());
    std::vector<std::pair<double, std::size_t>> cand(slide.size());
    for (std::size_t a = 0; a < slide.size(); ++a) {
        const auto& sa = slide.spots[a];
        for (std::size_t j = 0; j < slide.size(); ++j) {
            const auto& sj = slide.spots[j];
            cand[j] = {j == a ? 0.0 : std::hypot(sj.x_um - sa.x_um, sj.y_um - sa.y_um), j};
        }
        auto less = [&](const auto& p, const auto& q) {
            if (p.first != q.first) return p.first < q.first;
            if ((p.second == a) != (q.second == a)) return p.second == a;
            return slide.spots[p.second].id < slide.spots[q.second].id;
        };
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), less);
        Neighborhood nb;
        nb.anchor = a;
        for (std::size_t m = 0; m < k; ++m) {
            const auto& sm = slide.spots[cand[m].second];
            nb.members.push_back(cand[m].second);
            nb.offsets.push_back({(sm.x_um - sa.x_um) / unit, (sm.y_um - sa.y_um) / unit});
        }
        out.push_back(std::move(nb));
    }
    return out;
}

}  // namespace

std::vector<Neighborhood> build_neighborhoods(const SlideDataset& slide, const NeighborhoodOptions& options) {
    if (options.kind == NeighborhoodOptions::Kind::Grid) {
        HISTOST_REQUIRE(slide.mode == CoordinateMode::Grid, "build_neighborhoods: grid mode requires grid coordinates");
        return grid_neighborhoods(slide, options.grid_size);
    }
    HISTOST_REQUIRE(slide.mode == CoordinateMode::Continuous, "build_neighborhoods: k-NN mode requires continuous coordinates");
    return knn_neighborhoods(slide, options.k);
}

}  // namespace histost::data
