#include "drtsad/nn.hpp"

#include <cmath>

namespace drtsad::nn {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
    if (beta != 1.0) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
    const auto a_at = [&](std::size_t i, std::size_t p) {
        return trans_a ? a[p * lda + i] : a[i * lda + p];
    };
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = alpha * a_at(i, p);
            if (av == 0.0) continue;
            if (!trans_b) {
                const double* bp = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * b[j * ldb + p];
            }
        }
    }
}

void linear(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = b.empty() ? 0.0 : b[i];
        const double* wi = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += wi[j] * x[j];
        y[i] = acc;
    }
}

void linear_backward(std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dw, std::span<double> db,
                     std::span<double> dx, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double g = dy[i];
        if (!db.empty()) db[i] += g;
        if (g == 0.0) continue;
        double* dwi = dw.data() + i * cols;
        const double* wi = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            dwi[j] += g * x[j];
            if (!dx.empty()) dx[j] += g * wi[j];
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) {
    // Stable for large |x|.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

void softmax_inplace(std::span<double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> dx) {
    double inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * dy[i];
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] * (dy[i] - inner);
}

void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> y, std::size_t rows,
                std::size_t width, LayerNormCache& cache) {
    constexpr double kEps = 1e-6;
    cache.normalized.resize(rows * width);
    cache.inv_std.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * width;
        double mean = 0.0;
        for (std::size_t j = 0; j < width; ++j) mean += xr[j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + kEps);
        cache.inv_std[r] = inv;
        double* nr = cache.normalized.data() + r * width;
        double* yr = y.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) {
            nr[j] = (xr[j] - mean) * inv;
            yr[j] = gain[j] * nr[j] + bias[j];
        }
    }
}

void layer_norm_backward(std::span<const double> gain, const LayerNormCache& cache,
                         std::span<const double> dy, std::span<double> dgain,
                         std::span<double> dbias, std::span<double> dx, std::size_t rows,
                         std::size_t width) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* nr = cache.normalized.data() + r * width;
        const double* dyr = dy.data() + r * width;
        double* dxr = dx.data() + r * width;
        const double inv = cache.inv_std[r];

        double sum_dn = 0.0, sum_dn_n = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double dn = dyr[j] * gain[j];
            sum_dn += dn;
            sum_dn_n += dn * nr[j];
            dgain[j] += dyr[j] * nr[j];
            dbias[j] += dyr[j];
        }
        const double w = static_cast<double>(width);
        for (std::size_t j = 0; j < width; ++j) {
            const double dn = dyr[j] * gain[j];
            dxr[j] += inv * (dn - sum_dn / w - nr[j] * sum_dn_n / w);
        }
    }
}

void SgdMomentum::step(Vector& params, const Vector& grad, double learning_rate,
                       double momentum, double clip_norm) {
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    double norm_sq = 0.0;
    for (double g : grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_[i] = momentum * velocity_[i] + scale * grad[i];
        params[i] -= learning_rate * velocity_[i];
    }
}

void init_normal(Vector& params, Tensor t, std::size_t fan_in, RandomSource& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    rng.fill_normal(view(params, t), 0.0, sd);
}

}  // namespace drtsad::nn
