#include <algorithm>
#include <cmath>

#include "drtsad/dimreduce.hpp"
#include "drtsad/errors.hpp"

namespace drtsad {

namespace {

Matrix pairwise_squared_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix d2(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = squared_distance(x.row(i), x.row(j));
            d2(i, j) = d;
            d2(j, i) = d;
        }
    }
    return d2;
}

}  // namespace

TsneAffinities tsne_affinities(const Matrix& points, double perplexity) {
    const std::size_t n = points.rows();
    if (n < 2) throw PreconditionViolation("tsne_affinities: need at least 2 points");
    const Matrix d2 = pairwise_squared_distances(points);

    TsneAffinities out;
    out.conditional = Matrix(n, n);
    out.beta.assign(n, 1.0);

    Vector row(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Binary search the precision so exp(entropy) matches the target
        // perplexity. Saturates gracefully when n - 1 < perplexity.
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        double sum_p = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            sum_p = 0.0;
            double sum_dp = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                row[j] = std::exp(-beta * d2(i, j));
                sum_p += row[j];
                sum_dp += d2(i, j) * row[j];
            }
            if (sum_p <= 0.0) {  // all neighbors underflowed; relax
                beta_hi = beta;
                beta = 0.5 * (beta_lo + beta);
                continue;
            }
            const double entropy = std::log(sum_p) + beta * sum_dp / sum_p;  // nats
            const double current = std::exp(entropy);
            if (std::abs(current - perplexity) < 1e-5) break;
            if (current > perplexity) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta_lo + beta);
            }
        }
        out.beta[i] = beta;
        for (std::size_t j = 0; j < n; ++j) out.conditional(i, j) = row[j] / sum_p;
    }

    out.joint = Matrix(n, n);
    const double scale = 1.0 / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.joint(i, j) = (out.conditional(i, j) + out.conditional(j, i)) * scale;
    return out;
}

FittedReducer fit_tsne_joint(const Matrix& train, const Matrix& test,
                             const ReducerSpec& spec) {
    const std::size_t m = spec.target_dim;
    if (m > 3) throw PreconditionViolation("fit_tsne_joint: m must be <= 3");
    const Matrix x = vstack(train, test);
    const std::size_t n = x.rows();
    if (n > spec.sample_cap)
        throw TooLargeForExact("fit_tsne_joint: " + std::to_string(n) +
                               " rows exceed the exact-method cap of " +
                               std::to_string(spec.sample_cap));
    if (n < 2) throw PreconditionViolation("fit_tsne_joint: need at least 2 rows");

    const TsneParams& p = spec.tsne;
    TsneAffinities aff = tsne_affinities(x, p.perplexity);

    // PCA initialization, rescaled to the customary tiny spread.
    const FittedReducer pca = fit_pca(x, std::min(m, x.cols()));
    Matrix y = transform_linear(pca, x);
    if (y.cols() < m) {
        Matrix padded(n, m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) padded(i, j) = y(i, j);
        y = std::move(padded);
    }
    {
        double var0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) var0 += y(i, 0) * y(i, 0);
        const double sd0 = std::sqrt(var0 / static_cast<double>(n));
        const double scale = sd0 > 0.0 ? 1e-4 / sd0 : 1e-4;
        for (double& v : y.data()) v *= scale;
    }

    FittedReducer fr;
    fr.spec = spec;
    fr.spec.kind = ReducerKind::TSNE;
    fr.input_dim = x.cols();
    fr.trace_post_start = std::min(p.exaggeration_iters, p.total_iters);

    Matrix velocity(n, m);
    Matrix gains(n, m, 1.0);
    Matrix grad(n, m);
    Matrix qnum(n, n);

    for (std::size_t iter = 0; iter < p.total_iters; ++iter) {
        const bool exaggerating = iter < p.exaggeration_iters;
        const double p_scale = exaggerating ? p.exaggeration : 1.0;
        const double momentum =
            iter < p.exaggeration_iters ? p.momentum_initial : p.momentum_final;

        // Student-t numerators and normalizer over the embedding.
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            qnum(i, i) = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double q = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
                qnum(i, j) = q;
                qnum(j, i) = q;
                z += 2.0 * q;
            }
        }
        z = std::max(z, 1e-300);

        std::fill(grad.data().begin(), grad.data().end(), 0.0);
        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double pij = aff.joint(i, j);
                const double q = qnum(i, j) / z;
                const double mult = 4.0 * (p_scale * pij - q) * qnum(i, j);
                for (std::size_t dd = 0; dd < m; ++dd)
                    grad(i, dd) += mult * (y(i, dd) - y(j, dd));
                if (pij > 0.0) kl += pij * std::log(pij / std::max(q, 1e-300));
            }
        }
        fr.objective_trace.push_back(kl);

        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t dd = 0; dd < m; ++dd) {
                const bool same_sign = (grad(i, dd) > 0.0) == (velocity(i, dd) > 0.0);
                gains(i, dd) = same_sign ? gains(i, dd) * 0.8 : gains(i, dd) + 0.2;
                gains(i, dd) = std::max(gains(i, dd), 0.01);
                velocity(i, dd) =
                    momentum * velocity(i, dd) - p.learning_rate * gains(i, dd) * grad(i, dd);
                y(i, dd) += velocity(i, dd);
            }
        }
        const Vector centers = column_mean(y);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t dd = 0; dd < m; ++dd) y(i, dd) -= centers[dd];
    }

    TsnePayload payload;
    payload.embedding = std::move(y);
    payload.train_rows = train.rows();
    payload.test_rows = test.rows();
    payload.beta = std::move(aff.beta);
    fr.payload = std::move(payload);
    return fr;
}

}  // namespace drtsad
