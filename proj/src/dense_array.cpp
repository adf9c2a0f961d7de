#include "midol/dense_array.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace midol {

namespace {

std::size_t volume(const std::vector<std::size_t>& shape) {
    if (shape.empty())
        throw std::invalid_argument("DenseArray: shape must have at least one extent");
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0)
            throw std::invalid_argument("DenseArray: extents must be positive");
        n *= e;
    }
    return n;
}

void require_rank2(const DenseArray& a, const char* what) {
    if (a.rank() != 2)
        throw std::invalid_argument(std::string(what) + ": expected a rank-2 array, got " +
                                    a.shape_string());
}

}  // namespace

DenseArray::DenseArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(volume(shape_), fill) {}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != volume(shape_))
        throw std::invalid_argument("DenseArray: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string());
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, double fill) {
    return DenseArray({rows, cols}, fill);
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return DenseArray({rows, cols}, std::move(data));
}

DenseArray DenseArray::scalar(double value) { return DenseArray({1, 1}, value); }

std::size_t DenseArray::rows() const {
    require_rank2(*this, "rows");
    return shape_[0];
}

std::size_t DenseArray::cols() const {
    require_rank2(*this, "cols");
    return shape_[1];
}

std::span<double> DenseArray::row(std::size_t r) {
    return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<const double> DenseArray::row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
}

double DenseArray::item() const {
    if (data_.size() != 1)
        throw std::invalid_argument("item: array of shape " + shape_string() + " is not a scalar");
    return data_[0];
}

bool DenseArray::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseArray::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string DenseArray::shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

DenseArray transpose(const DenseArray& a) {
    require_rank2(a, "transpose");
    DenseArray t = DenseArray::matrix(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_string() + " * " +
                                    b.shape_string());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    DenseArray out = DenseArray::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = &out(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double s = a(i, p);
            if (s == 0.0) continue;
            const double* br = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
        }
    }
    return out;
}

DenseArray matmul_transposed(const DenseArray& a, const DenseArray& b) {
    require_rank2(a, "matmul_transposed");
    require_rank2(b, "matmul_transposed");
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_transposed: shape mismatch " + a.shape_string() +
                                    " * " + b.shape_string() + "^T");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    DenseArray out = DenseArray::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.row(i).data();
        for (std::size_t j = 0; j < m; ++j) {
            const double* br = b.row(j).data();
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            out(i, j) = acc;
        }
    }
    return out;
}

}  // namespace midol
