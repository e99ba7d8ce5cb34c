#include "drtsad/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "drtsad/errors.hpp"

namespace drtsad {

Matrix covariance_matrix(const Matrix& data, const Vector& mean) {
    const std::size_t m = data.rows();
    const std::size_t d = data.cols();
    if (m < 2)
        throw InsufficientSamples("covariance_matrix: need at least 2 samples, got " +
                                  std::to_string(m));
    if (mean.size() != d) throw DimensionMismatch("covariance_matrix: mean length != columns");

    Matrix cov(d, d);
    Vector centered(d);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = &data.data()[i * d];
        for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - mean[j];
        for (std::size_t j = 0; j < d; ++j) {
            const double cj = centered[j];
            for (std::size_t k = j; k < d; ++k) cov(j, k) += cj * centered[k];
        }
    }
    const double scale = 1.0 / static_cast<double>(m - 1);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = j; k < d; ++k) {
            cov(j, k) *= scale;
            cov(k, j) = cov(j, k);  // exact symmetry
        }
    return cov;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw PreconditionViolation("pearson_correlation: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw PreconditionViolation("pearson_correlation: need at least 2 points");

    const auto constant = [](std::span<const double> v) {
        for (double a : v)
            if (a != v[0]) return false;
        return true;
    };
    if (constant(x) || constant(y))
        throw ZeroVariance("pearson_correlation: constant input vector");

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw ZeroVariance("pearson_correlation: zero variance after centering");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double e = std::exp(row[j] - mx);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

Vector kl_divergence_rows(const Matrix& p, const Matrix& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols())
        throw DimensionMismatch("kl_divergence_rows: shape mismatch");
    Vector out(p.rows(), 0.0);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double pij = p(i, j);
            if (pij == 0.0) continue;  // 0 * ln(0/q) = 0
            const double qij = q(i, j);
            if (qij == 0.0)
                throw InfiniteDivergence("kl_divergence_rows: q zero on p support at (" +
                                         std::to_string(i) + "," + std::to_string(j) + ")");
            acc += pij * std::log(pij / qij);
        }
        out[i] = acc;
    }
    return out;
}

namespace {

// One cyclic Jacobi sweep, rotating away every off-diagonal pair.
void jacobi_sweep(Matrix& a, Matrix& v) {
    const std::size_t n = a.rows();
    for (std::size_t p = 0; p + 1 < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            const double apq = a(p, q);
            if (apq == 0.0) continue;
            const double app = a(p, p);
            const double aqq = a(q, q);
            // Skip rotations that cannot change anything at working precision.
            if (std::abs(apq) < 1e-300 ||
                std::abs(apq) <= 1e-18 * (std::abs(app) + std::abs(aqq)))
                continue;

            const double theta = (aqq - app) / (2.0 * apq);
            const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                             (std::abs(theta) + std::sqrt(theta * theta + 1.0));
            const double c = 1.0 / std::sqrt(t * t + 1.0);
            const double s = t * c;
            const double tau = s / (1.0 + c);

            a(p, p) = app - t * apq;
            a(q, q) = aqq + t * apq;
            a(p, q) = 0.0;
            a(q, p) = 0.0;

            for (std::size_t i = 0; i < n; ++i) {
                if (i != p && i != q) {
                    const double aip = a(i, p);
                    const double aiq = a(i, q);
                    a(i, p) = aip - s * (aiq + tau * aip);
                    a(p, i) = a(i, p);
                    a(i, q) = aiq + s * (aip - tau * aiq);
                    a(q, i) = a(i, q);
                }
                const double vip = v(i, p);
                const double viq = v(i, q);
                v(i, p) = vip - s * (viq + tau * vip);
                v(i, q) = viq + s * (vip - tau * viq);
            }
        }
    }
}

double off_diagonal_norm(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) acc += a(i, j) * a(i, j);
    return std::sqrt(2.0 * acc);
}

}  // namespace

EigenDecomposition symmetric_eigendecomposition(const Matrix& a) {
    const std::size_t n = a.rows();
    if (n == 0 || a.cols() != n)
        throw DimensionMismatch("symmetric_eigendecomposition: matrix must be square");

    const double sym_tol = 1e-9 * std::max(1.0, max_abs(a));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > sym_tol)
                throw NotSymmetric("symmetric_eigendecomposition: input not symmetric at (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");

    // Work on the exactly symmetrized copy.
    Matrix work(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) work(i, j) = 0.5 * (a(i, j) + a(j, i));

    Matrix v = Matrix::identity(n);
    const double scale = std::max(frobenius_norm(work), 1e-300);
    for (int sweep = 0; sweep < 100; ++sweep) {
        if (off_diagonal_norm(work) <= 1e-14 * scale) break;
        jacobi_sweep(work, v);
    }

    // Sort descending, permuting eigenvector columns alongside.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return work(x, x) > work(y, y); });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.eigenvalues[k] = work(src, src);

        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mag = std::abs(v(i, src));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = sign * v(i, src);
    }
    return out;
}

double gradient_check(const ScalarFn& f, const GradientFn& grad, const Vector& point,
                      double step) {
    if (!(step >= 1e-7 && step <= 1e-3))
        throw PreconditionViolation("gradient_check: step must lie in [1e-7, 1e-3]");

    const Vector analytic = grad(point);
    if (analytic.size() != point.size())
        throw DimensionMismatch("gradient_check: gradient length != point length");

    Vector x = point;
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = f(x);
        x[i] = saved - step;
        const double fm = f(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EvaluationFailed("gradient_check: non-finite function value at coordinate " +
                                   std::to_string(i));
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace drtsad
