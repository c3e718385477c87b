// SPDX-License-Identifier: Apache-2.0
#include "histost/common/errors.hpp"
#include "histost/data/feature_matrix.hpp"

namespace histost::data {

std::string encode_feature_matrix(const FeatureMatrix& m) {
    HISTOST_REQUIRE(m.values.size() == m.rows * m.cols, "feature matrix: value count does not match rows*cols");
    std::string out = "STRM";
    out.reserve(24 + 4 * m.values.size());
    put_u32(out, kFeatureFormatVersion);
    put_u64(out, m.rows);
    put_u64(out, m.cols);
    for (float v : m.values) put_f32(out, v);
    return out;
}

FeatureMatrix decode_feature_matrix(std::string_view bytes, const std::string& origin) {
    if (bytes.size() < 24 || bytes.substr(0, 4) != "STRM") throw FormatError(origin + ": missing STRM magic");
    std::size_t pos = 4;
    const auto version = get_u32(bytes, pos);
    if (version != kFeatureFormatVersion) {
        throw FormatError(origin + ": unsupported feature format version " + std::to_string(version));
    }
    FeatureMatrix m;
    m.rows = get_u64(bytes, pos);
    m.cols = get_u64(bytes, pos);
    const std::uint64_t n = m.rows * m.cols;
    if (bytes.size() - pos != 4 * n) {
        throw FormatError(origin + ": expected " + std::to_string(4 * n) + " payload bytes, found " +
                          std::to_string(bytes.size() - pos));
    }
    m.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) m.values[i] = get_f32(bytes, pos);
    return m;
}

void write_feature_matrix(const fs::path& path, const FeatureMatrix& m) {
    write_file_atomic(path, encode_feature_matrix(m));
}

FeatureMatrix read_feature_matrix(const fs::path& path) { return decode_feature_matrix(read_file(path), path.string()); }

}  // namespace histost::data
