#include <cmath>

#include <doctest.h>

#include "drtsad/errors.hpp"
#include "drtsad/matrix.hpp"
#include "drtsad/numerics.hpp"
#include "drtsad/rng.hpp"

using namespace drtsad;

namespace {

Matrix random_symmetric(std::size_t n, RandomSource& rng, double scale = 1.0) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = rng.next_normal(0.0, scale);
            a(i, j) = v;
            a(j, i) = v;
        }
    return a;
}

double eigen_residual(const Matrix& a, const EigenDecomposition& eig) {
    const std::size_t n = a.rows();
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double av = 0.0;
            for (std::size_t j = 0; j < n; ++j) av += a(i, j) * eig.eigenvectors(j, k);
            const double r = av - eig.eigenvalues[k] * eig.eigenvectors(i, k);
            norm += r * r;
        }
        worst = std::max(worst, std::sqrt(norm));
    }
    return worst;
}

}  // namespace

TEST_CASE("covariance of identical rows is the zero matrix") {
    const Matrix data = Matrix::from_rows({{2.0, -1.0, 3.0}, {2.0, -1.0, 3.0}});
    const auto cov = covariance_matrix(data, column_mean(data));
    for (double v : cov.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("covariance matches the hand-summed outer products") {
    const Matrix data = Matrix::from_rows({{1, 0}, {0, 1}, {-1, 0}, {0, -1}});
    const Vector mean{0.0, 0.0};
    const auto cov = covariance_matrix(data, mean);
    CHECK(cov(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(cov(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(cov(0, 1) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("covariance rejects a single sample") {
    const Matrix data = Matrix::from_rows({{1.0, 2.0}});
    CHECK_THROWS_AS(covariance_matrix(data, column_mean(data)), InsufficientSamples);
}

TEST_CASE("covariance is symmetric with non-negative diagonal") {
    RandomSource rng(42);
    Matrix data(30, 6);
    rng.fill_normal(data, 0.0, 2.0);
    const auto cov = covariance_matrix(data, column_mean(data));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(cov(i, i) >= -1e-12);
        for (std::size_t j = 0; j < 6; ++j) CHECK(cov(i, j) == cov(j, i));
    }
}

TEST_CASE("pearson self-correlation and sign flip") {
    const Vector x{1.0, 2.0, 4.0, 8.0};
    Vector neg = x;
    for (double& v : neg) v = -v;
    CHECK(pearson_correlation(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson_correlation(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pearson matches the direct formula") {
    const Vector x{1, 2, 3}, y{1, 2, 4};
    // Direct evaluation: centered sums computed by hand.
    const double mx = 2.0, my = 7.0 / 3.0;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 3; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson_correlation(x, y) ==
          doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-12));
}

TEST_CASE("pearson rejects constant vectors") {
    const Vector c{5.0, 5.0, 5.0}, x{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(pearson_correlation(c, x), ZeroVariance);
    CHECK_THROWS_AS(pearson_correlation(x, c), ZeroVariance);
}

TEST_CASE("pearson is invariant to positive affine maps and flips under negative scale") {
    RandomSource rng(7);
    Vector x(20), y(20);
    rng.fill_normal(x, 0.0, 1.0);
    rng.fill_normal(y, 0.0, 1.0);
    const double base = pearson_correlation(x, y);
    Vector ax(20), nx(20);
    for (std::size_t i = 0; i < 20; ++i) {
        ax[i] = 3.5 * x[i] + 2.0;
        nx[i] = -0.25 * x[i] + 1.0;
    }
    CHECK(pearson_correlation(ax, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(pearson_correlation(nx, y) == doctest::Approx(-base).epsilon(1e-12));
}

TEST_CASE("softmax of a constant row is uniform and shift-invariant") {
    Matrix m(1, 5, 3.25);
    const auto s = softmax_rows(m);
    for (std::size_t j = 0; j < 5; ++j) CHECK(s(0, j) == doctest::Approx(0.2).epsilon(1e-13));

    Matrix a = Matrix::from_rows({{0.3, -1.2, 2.0, 0.0}});
    Matrix b = a;
    for (double& v : b.data()) v += 17.5;
    const auto sa = softmax_rows(a);
    const auto sb = softmax_rows(b);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(std::abs(sa(0, j) - sb(0, j)) < 1e-12);
}

TEST_CASE("softmax closed form for [0, ln 3]") {
    const Matrix m = Matrix::from_rows({{0.0, std::log(3.0)}});
    const auto s = softmax_rows(m);
    CHECK(s(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
    RandomSource rng(3);
    Matrix m(8, 11);
    rng.fill_normal(m, 0.0, 4.0);
    const auto s = softmax_rows(m);
    for (std::size_t i = 0; i < 8; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 11; ++j) {
            total += s(i, j);
            CHECK(s(i, j) >= 0.0);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("KL of identical distributions is zero") {
    const Matrix p = Matrix::from_rows({{0.2, 0.3, 0.5}});
    const auto kl = kl_divergence_rows(p, p);
    CHECK(std::abs(kl[0]) < 1e-15);
}

TEST_CASE("KL closed form with a zero in p") {
    const Matrix p = Matrix::from_rows({{1.0, 0.0}});
    const Matrix q = Matrix::from_rows({{0.5, 0.5}});
    CHECK(kl_divergence_rows(p, q)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("KL reports infinite divergence instead of clipping") {
    const Matrix p = Matrix::from_rows({{0.5, 0.5}});
    const Matrix q = Matrix::from_rows({{1.0, 0.0}});
    CHECK_THROWS_AS(kl_divergence_rows(p, q), InfiniteDivergence);
}

TEST_CASE("softmax rows followed by self-KL vanishes") {
    RandomSource rng(11);
    Matrix m(6, 9);
    rng.fill_normal(m, 0.0, 2.0);
    const auto s = softmax_rows(m);
    const auto kl = kl_divergence_rows(s, s);
    for (double v : kl) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("eigendecomposition of the identity") {
    const auto eig = symmetric_eigendecomposition(Matrix::identity(3));
    for (double v : eig.eigenvalues) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("eigendecomposition of diag(4, 1)") {
    const Matrix a = Matrix::from_rows({{4.0, 0.0}, {0.0, 1.0}});
    const auto eig = symmetric_eigendecomposition(a);
    CHECK(eig.eigenvalues[0] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(eig.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-14));
    // Axis-aligned with the positive sign convention.
    CHECK(eig.eigenvectors(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(eig.eigenvectors(1, 1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("eigendecomposition matches the 2x2 characteristic polynomial") {
    const Matrix a = Matrix::from_rows({{3.0, 1.5}, {1.5, -2.0}});
    const auto eig = symmetric_eigendecomposition(a);
    const double tr = 1.0, det = -6.0 - 2.25;
    const double disc = std::sqrt(tr * tr - 4.0 * det);
    CHECK(eig.eigenvalues[0] == doctest::Approx((tr + disc) / 2.0).epsilon(1e-12));
    CHECK(eig.eigenvalues[1] == doctest::Approx((tr - disc) / 2.0).epsilon(1e-12));
}

TEST_CASE("eigendecomposition residuals, orthonormality, trace and reconstruction") {
    RandomSource rng(99);
    for (const std::size_t n : {2, 5, 16, 33, 64}) {
        const Matrix a = random_symmetric(n, rng, 2.0);
        const auto eig = symmetric_eigendecomposition(a);
        const double norm = frobenius_norm(a);
        CHECK(eigen_residual(a, eig) < 1e-8 * std::max(1.0, norm));

        // V^T V = I.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    acc += eig.eigenvectors(k, i) * eig.eigenvectors(k, j);
                CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-9);
            }

        double trace = 0.0, eigsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            trace += a(i, i);
            eigsum += eig.eigenvalues[i];
        }
        CHECK(std::abs(trace - eigsum) < 1e-8 * std::max(1.0, norm));

        // V Lambda V^T reconstructs A.
        double recon_err = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    acc += eig.eigenvectors(i, k) * eig.eigenvalues[k] * eig.eigenvectors(j, k);
                recon_err = std::max(recon_err, std::abs(acc - a(i, j)));
            }
        CHECK(recon_err < 1e-7 * std::max(1.0, norm));

        for (std::size_t i = 0; i + 1 < n; ++i)
            CHECK(eig.eigenvalues[i] >= eig.eigenvalues[i + 1]);
    }
}

TEST_CASE("eigendecomposition rejects non-symmetric input") {
    const Matrix a = Matrix::from_rows({{1.0, 2.0}, {0.0, 1.0}});
    CHECK_THROWS_AS(symmetric_eigendecomposition(a), NotSymmetric);
}

TEST_CASE("gradient check is exact on quadratics") {
    const ScalarFn f = [](const Vector& x) {
        double acc = 0.0;
        for (double v : x) acc += v * v;
        return acc;
    };
    const GradientFn g = [](const Vector& x) {
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i];
        return out;
    };
    const Vector point{0.5, -1.25, 2.0, 0.0};
    CHECK(gradient_check(f, g, point, 1e-5) < 1e-8);
}

TEST_CASE("gradient check validates a softmax contraction") {
    RandomSource rng(17);
    Vector c(6);
    rng.fill_normal(c, 0.0, 1.0);
    const ScalarFn f = [&c](const Vector& x) {
        Matrix m(1, x.size());
        std::copy(x.begin(), x.end(), m.data().begin());
        const auto s = softmax_rows(m);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += s(0, i) * c[i];
        return acc;
    };
    const GradientFn g = [&c](const Vector& x) {
        Matrix m(1, x.size());
        std::copy(x.begin(), x.end(), m.data().begin());
        const auto s = softmax_rows(m);
        double inner = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) inner += s(0, i) * c[i];
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = s(0, i) * (c[i] - inner);
        return out;
    };
    Vector point(6);
    rng.fill_normal(point, 0.0, 1.0);
    CHECK(gradient_check(f, g, point, 1e-5) < 1e-6);
}

TEST_CASE("gradient check enforces the step range") {
    const ScalarFn f = [](const Vector&) { return 0.0; };
    const GradientFn g = [](const Vector& x) { return Vector(x.size(), 0.0); };
    CHECK_THROWS_AS(gradient_check(f, g, Vector{1.0}, 1e-8), PreconditionViolation);
    CHECK_THROWS_AS(gradient_check(f, g, Vector{1.0}, 1e-2), PreconditionViolation);
}

TEST_CASE("gradient check surfaces non-finite evaluations") {
    const ScalarFn f = [](const Vector& x) { return std::log(x[0]); };
    const GradientFn g = [](const Vector& x) { return Vector{1.0 / x[0]}; };
    CHECK_THROWS_AS(gradient_check(f, g, Vector{0.0}, 1e-5), EvaluationFailed);
}

TEST_CASE("random source is reproducible and forkable") {
    RandomSource a(123), b(123);
    Matrix ma(4, 4), mb(4, 4);
    a.fill_normal(ma, 0.0, 1.0);
    b.fill_normal(mb, 0.0, 1.0);
    CHECK(ma == mb);

    RandomSource c(123);
    auto child1 = c.fork(1);
    auto child2 = c.fork(2);
    CHECK(child1.next_u64() != child2.next_u64());
    // Forking does not advance the parent.
    RandomSource d(123);
    CHECK(c.next_u64() == d.next_u64());
}
