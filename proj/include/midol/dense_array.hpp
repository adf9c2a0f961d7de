#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace midol {

/// Row-major array of doubles. Every differentiable op works on rank-2
/// arrays; rank-1 and higher ranks exist for checkpoint storage.
class DenseArray {
public:
    DenseArray() = default;
    explicit DenseArray(std::vector<std::size_t> shape, double fill = 0.0);
    DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

    static DenseArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static DenseArray scalar(double value);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    /// Value of a one-element array.
    double item() const;

    bool all_finite() const noexcept;
    bool same_shape(const DenseArray& other) const noexcept { return shape_ == other.shape_; }
    void fill(double value);

    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

DenseArray transpose(const DenseArray& a);
/// Plain (non-differentiable) matrix product.
DenseArray matmul(const DenseArray& a, const DenseArray& b);
/// a * b^T without materializing the transpose.
DenseArray matmul_transposed(const DenseArray& a, const DenseArray& b);

}  // namespace midol
