// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "histost/data/panel.hpp"
#include "histost/data/slide.hpp"
#include "histost/numerics/tensor.hpp"

namespace histost::data {

/// Dense spots x panel-genes count matrix.
ad::Tensor dense_counts(const SlideDataset& slide);

/// Dense counts laid out over a union panel; columns for genes absent from
/// the slide panel are zero.
ad::Tensor dense_counts(const SlideDataset& slide, const PanelUnion& onto);

struct NormalizedExpression {
    /// kept-spots x genes, value = ln(1 + scale * count / library_size)
    ad::Tensor values;
    /// Row of the input matrix each output row came from.
    std::vector<std::size_t> kept_rows;
};

/// Library-size normalization followed by ln(1+x). Spots whose library size
/// is zero are dropped with a warning. Negative counts violate the contract.
NormalizedExpression normalize_expression(const ad::Tensor& counts, double scale = 1e4);

/// Per-spot normalization of a single count vector; all zeros in, all zeros out.
std::vector<double> normalize_spot(std::span<const double> counts, double scale = 1e4);

/// Population variance of each column.
std::vector<double> column_variances(const ad::Tensor& m);

/// The k highest-variance columns, sorted by descending variance with ties
/// broken by lower index. Constant columns are never selected; asking for
/// more than the number of non-constant columns throws ContractViolation
/// reporting the available count.
std::vector<std::size_t> select_hvg(const ad::Tensor& normalized, std::size_t k);

}  // namespace histost::data
