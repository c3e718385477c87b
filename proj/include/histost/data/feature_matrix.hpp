// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histost/common/fs.hpp"

namespace histost::data {

/// Row-major float32 matrix in the "STRM" binary layout:
///
///   bytes 0..3   "STRM"
///   u32 LE       format version (1)
///   u64 LE       rows
///   u64 LE       cols
///   f32 LE       rows*cols values, row-major
struct FeatureMatrix {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<float> values;

    std::span<const float> row(std::size_t r) const {
        return std::span<const float>(values).subspan(r * cols, cols);
    }
    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

std::string encode_feature_matrix(const FeatureMatrix& m);
FeatureMatrix decode_feature_matrix(std::string_view bytes, const std::string& origin = "<memory>");

void write_feature_matrix(const fs::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_matrix(const fs::path& path);

}  // namespace histost::data
