// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/log.hpp"
#include "histost/data/expression.hpp"

namespace histost::data {

ad::Tensor dense_counts(const SlideDataset& slide) {
    HISTOST_REQUIRE(slide.size() > 0 && slide.panel.size() > 0, "dense_counts: empty slide or panel");
    ad::Tensor m(ad::Tensor::Shape{slide.size(), slide.panel.size()});
    for (std::size_t i = 0; i < slide.size(); ++i)
        for (const auto& e : slide.spots[i].expression) m.at(i, e.gene) = static_cast<double>(e.count);
    return m;
}

ad::Tensor dense_counts(const SlideDataset& slide, const PanelUnion& onto) {
    HISTOST_REQUIRE(slide.size() > 0, "dense_counts: empty slide");
    const auto cols = panel_projection(slide.panel, onto);
    ad::Tensor m(ad::Tensor::Shape{slide.size(), onto.panel.size()});
    for (std::size_t i = 0; i < slide.size(); ++i)
        for (const auto& e : slide.spots[i].expression) m.at(i, cols[e.gene]) = static_cast<double>(e.count);
    return m;
}

std::vector<double> normalize_spot(std::span<const double> counts, double scale) {
    double lib = 0.0;
    for (double c : counts) {
        HISTOST_REQUIRE(c >= 0.0, "normalize_expression: negative count");
        lib += c;
    }
    std::vector<double> out(counts.size(), 0.0);
    if (lib <= 0.0) return out;
    for (std::size_t j = 0; j < counts.size(); ++j) out[j] = std::log1p(scale * counts[j] / lib);
    return out;
}

NormalizedExpression normalize_expression(const ad::Tensor& counts, double scale) {
    HISTOST_REQUIRE(counts.ndim() == 2, "normalize_expression: expected a spots x genes matrix");
    HISTOST_REQUIRE(scale > 0.0, "normalize_expression: scale must be positive");
    const std::size_t n = counts.rows(), g = counts.cols();
    for (double c : counts.data()) HISTOST_REQUIRE(c >= 0.0, "normalize_expression: negative count");

    NormalizedExpression out;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
        double lib = 0.0;
        for (double c : counts.row(i)) lib += c;
        if (lib <= 0.0) {
            warn("normalize_expression: dropping spot row " + std::to_string(i) + " with zero library size");
            continue;
        }
        out.kept_rows.push_back(i);
        for (double c : counts.row(i)) values.push_back(std::log1p(scale * c / lib));
    }
    if (out.kept_rows.empty()) throw DomainError("normalize_expression: every spot has zero library size");
    out.values = ad::Tensor(ad::Tensor::Shape{out.kept_rows.size(), g}, std::move(values));
    return out;
}

std::vector<double> column_variances(const ad::Tensor& m) {
    HISTOST_REQUIRE(m.ndim() == 2, "column_variances: expected a matrix");
    const std::size_t n = m.rows(), g = m.cols();
    std::vector<double> mean(g, 0.0), var(g, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < g; ++j) mean[j] += m.at(i, j);
    for (auto& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < g; ++j) {
            const double d = m.at(i, j) - mean[j];
            var[j] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(n);
    return var;
}

std::vector<std::size_t> select_hvg(const ad::Tensor& normalized, std::size_t k) {
    HISTOST_REQUIRE(k >= 1, "select_hvg: k must be at least 1");
    const auto var = column_variances(normalized);
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < var.size(); ++j)
        if (var[j] > 0.0) candidates.push_back(j);
    if (k > candidates.size()) {
        throw ContractViolation("select_hvg: requested " + std::to_string(k) + " genes but only " +
                                std::to_string(candidates.size()) + " have nonzero variance");
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
    candidates.resize(k);
    return candidates;
}

}  // namespace histost::data
