// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace histost::ad {

/// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 are used
/// throughout; higher ranks are representable but no op consumes them.
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() : shape_{}, data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    /// Leading extent; 1 for scalars.
    std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    /// Trailing extent of a matrix; the length of a vector; 1 for scalars.
    std::size_t cols() const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }
    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    void fill(double v);

    /// "[2, 3]"
    std::string shape_string() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const Tensor::Shape& shape);

}  // namespace histost::ad
