// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "histost/common/fs.hpp"
#include "histost/data/panel.hpp"

namespace histost::data {

enum class CoordinateMode { Grid, Continuous };

const char* to_string(CoordinateMode mode);
CoordinateMode coordinate_mode_from_string(const std::string& s);

/// One sparse expression entry: gene index into the slide panel and its count.
struct ExpressionEntry {
    std::uint32_t gene = 0;
    std::uint64_t count = 0;
    friend bool operator==(const ExpressionEntry&, const ExpressionEntry&) = default;
};

/// One measurement location. Grid slides use `row`/`col`; continuous slides
/// use `x_um`/`y_um`.
struct SpotRecord {
    std::string id;
    int row = 0;
    int col = 0;
    double x_um = 0.0;
    double y_um = 0.0;
    /// Sorted by gene index, no duplicates, zero counts omitted.
    std::vector<ExpressionEntry> expression;
    std::vector<float> patch_features;
    std::optional<std::string> label;

    friend bool operator==(const SpotRecord&, const SpotRecord&) = default;
};

struct SlideDataset {
    std::string slide_id;
    GenePanel panel;
    CoordinateMode mode = CoordinateMode::Grid;
    std::size_t feature_dim = 0;
    std::vector<SpotRecord> spots;

    std::size_t size() const { return spots.size(); }
    bool has_labels() const;
    /// Throws FormatError naming the offending spot or gene.
    void validate() const;
    /// Index of a spot id; throws LookupError.
    std::size_t index_of(const std::string& spot_id) const;

    friend bool operator==(const SlideDataset&, const SlideDataset&) = default;
};

/// Writes the manifest `<dir>/<slide_id>.json` plus panel.txt, coords.csv,
/// expr.csv, features.bin and (when labelled) labels.csv, each prefixed by the
/// slide id. Returns the manifest path.
fs::path save_slide(const SlideDataset& slide, const fs::path& dir);

/// Parses and validates a slide manifest. Relative paths inside the
/// manifest resolve against the manifest's directory.
SlideDataset load_slide(const fs::path& manifest_path);

/// Spot labels as dense integer ids following the sorted order of the
/// distinct label names. Throws FormatError if any spot is unlabelled.
std::vector<int> label_ids(const SlideDataset& slide, std::vector<std::string>* names = nullptr);

}  // namespace histost::data
