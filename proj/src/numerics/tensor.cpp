// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <sstream>

#include "histost/common/errors.hpp"
#include "histost/numerics/tensor.hpp"

namespace histost::ad {

std::size_t shape_size(const Tensor::Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        HISTOST_REQUIRE(e > 0, "tensor extents must be positive");
        n *= e;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
        throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
    }
}

Tensor Tensor::vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    HISTOST_REQUIRE(rows.size() > 0, "matrix needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> v;
    v.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        HISTOST_REQUIRE(r.size() == cols, "ragged matrix literal");
        v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(v));
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return shape_[0];
    return data_.size() / shape_[0];
}

double Tensor::item() const {
    HISTOST_REQUIRE(data_.size() == 1, "item() on non-scalar tensor " + shape_string());
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? ", " : "") << shape_[i];
    os << ']';
    return os.str();
}

}  // namespace histost::ad
