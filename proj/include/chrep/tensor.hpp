#ifndef CHREP_TENSOR_HPP
#define CHREP_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace chrep {

/// Dense row-major matrix of doubles.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor2 identity(std::size_t n);
    static Tensor2 row_vector(std::span<const double> v);
    static Tensor2 scalar(double v) { return Tensor2(1, 1, v); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& vec() const { return data_; }

    /// Extracts column c as a vector.
    std::vector<double> col(std::size_t c) const;
    /// New matrix holding the given rows, in order.
    Tensor2 gather_rows(std::span<const std::size_t> idx) const;

    bool all_finite() const;
    void fill(double v);

    friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// C = op(A) * op(B), where op transposes when the matching flag is set.
Tensor2 matmul(const Tensor2& a, const Tensor2& b, bool trans_a = false, bool trans_b = false);
Tensor2 transpose(const Tensor2& a);
/// Stacks matrices with equal column counts vertically.
Tensor2 vstack(std::span<const Tensor2> parts);

double max_abs_diff(const Tensor2& a, const Tensor2& b);

} // namespace chrep

#endif
