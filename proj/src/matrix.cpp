#include "drtsad/matrix.hpp"

#include <cmath>
#include <cstdlib>

#include "drtsad/errors.hpp"

namespace drtsad {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionMismatch("ragged initializer rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionMismatch("matmul: " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = &c.data()[i * c.cols()];
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = &b.data()[k * b.cols()];
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw DimensionMismatch("matvec: column count != vector length");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        const double* ai = &a.data()[i * a.cols()];
        for (std::size_t j = 0; j < a.cols(); ++j) acc += ai[j] * x[j];
        y[i] = acc;
    }
    return y;
}

Vector column_mean(const Matrix& m) {
    Vector mean(m.cols(), 0.0);
    if (m.rows() == 0) return mean;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* ri = &m.data()[i * m.cols()];
        for (std::size_t j = 0; j < m.cols(); ++j) mean[j] += ri[j];
    }
    for (double& v : mean) v /= static_cast<double>(m.rows());
    return mean;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    if (top.empty()) return bottom;
    if (bottom.empty()) return top;
    if (top.cols() != bottom.cols()) throw DimensionMismatch("vstack: column counts differ");
    Matrix out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.data().begin(), top.data().end(), out.data().begin());
    std::copy(bottom.data().begin(), bottom.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(top.data().size()));
    return out;
}

Matrix rows_slice(const Matrix& m, std::size_t first, std::size_t count) {
    if (first + count > m.rows()) throw DimensionMismatch("rows_slice: out of range");
    Matrix out(count, m.cols());
    std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(first * m.cols()),
              m.data().begin() + static_cast<std::ptrdiff_t>((first + count) * m.cols()),
              out.data().begin());
    return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data()) acc += v * v;
    return std::sqrt(acc);
}

double max_abs(const Matrix& m) {
    double mx = 0.0;
    for (double v : m.data()) mx = std::max(mx, std::abs(v));
    return mx;
}

bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data())); }

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace drtsad
