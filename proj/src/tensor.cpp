#include "chrep/tensor.hpp"

#include "chrep/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace chrep {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

} // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("Tensor2: data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Tensor2::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2(r, c, std::move(data));
}

Tensor2 Tensor2::identity(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor2 Tensor2::row_vector(std::span<const double> v) {
    return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

std::string Tensor2::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

std::vector<double> Tensor2::col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

Tensor2 Tensor2::gather_rows(std::span<const std::size_t> idx) const {
    Tensor2 out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows_) throw ShapeError("gather_rows: index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols_), cols_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
}

bool Tensor2::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor2::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b, bool trans_a, bool trans_b) {
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t ka = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    if (ka != kb) {
        throw ShapeError("matmul: inner dimensions differ (" + a.shape_str() + (trans_a ? "^T" : "") + " * " +
                         b.shape_str() + (trans_b ? "^T" : "") + ")");
    }
    Tensor2 c(m, n);
    if (m == 0 || n == 0 || ka == 0) return c;
    ConstMap am(a.data().data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
    ConstMap bm(b.data().data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
    MutMap cm(c.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (!trans_a && !trans_b) cm.noalias() = am * bm;
    else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am.transpose() * bm.transpose();
    return c;
}

Tensor2 transpose(const Tensor2& a) {
    Tensor2 t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

Tensor2 vstack(std::span<const Tensor2> parts) {
    if (parts.empty()) return {};
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("vstack: column counts differ");
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor2(rows, cols, std::move(data));
}

double max_abs_diff(const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace chrep
