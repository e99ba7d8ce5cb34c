#pragma once

#include <functional>

#include "drtsad/matrix.hpp"

namespace drtsad {

/// Sample covariance (1/(m-1) normalization) of row-sample data about `mean`.
/// Symmetric by construction. Throws InsufficientSamples when data has < 2 rows.
Matrix covariance_matrix(const Matrix& data, const Vector& mean);

/// Pearson correlation of two equal-length vectors, clamped to [-1, 1].
/// Throws ZeroVariance when either vector is constant.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Row-wise softmax with max-subtraction for stability.
Matrix softmax_rows(const Matrix& m);

/// Per-row KL(p || q) with the 0*ln(0) = 0 convention.
/// Throws InfiniteDivergence where q is zero on p's support.
Vector kl_divergence_rows(const Matrix& p, const Matrix& q);

struct EigenDecomposition {
    Vector eigenvalues;   // descending
    Matrix eigenvectors;  // orthonormal columns, column i pairs with eigenvalues[i]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending. Each eigenvector is signed so that its
/// largest-magnitude entry is positive (first such entry on ties), which makes
/// downstream projections reproducible. Throws NotSymmetric if the input is
/// not symmetric within 1e-9 (relative to its largest entry).
EigenDecomposition symmetric_eigendecomposition(const Matrix& a);

using ScalarFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

/// Central-difference check of an analytic gradient at `point`.
/// Returns max_i |g_analytic_i - g_fd_i| / max(1, |g_fd_i|).
/// `step` must lie in [1e-7, 1e-3]. Throws EvaluationFailed if the function
/// returns a non-finite value near `point`.
double gradient_check(const ScalarFn& f, const GradientFn& grad, const Vector& point,
                      double step);

}  // namespace drtsad
