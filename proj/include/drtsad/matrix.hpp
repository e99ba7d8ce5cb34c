#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace drtsad {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Vector matvec(const Matrix& a, std::span<const double> x);

/// Per-column arithmetic mean.
Vector column_mean(const Matrix& m);

Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix rows_slice(const Matrix& m, std::size_t first, std::size_t count);

double squared_distance(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace drtsad
