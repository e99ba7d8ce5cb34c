#pragma once

#include <cstddef>
#include <span>

#include "drtsad/matrix.hpp"
#include "drtsad/rng.hpp"

namespace drtsad::nn {

/// A named slice of a flat parameter (or gradient) buffer.
struct Tensor {
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 1;
    std::size_t size() const { return rows * cols; }
};

/// Allocates tensor slots in a flat buffer at layout-build time.
class Arena {
public:
    Tensor matrix(std::size_t rows, std::size_t cols) {
        Tensor t{total_, rows, cols};
        total_ += rows * cols;
        return t;
    }
    Tensor vector(std::size_t n) { return matrix(n, 1); }
    std::size_t total() const { return total_; }

private:
    std::size_t total_ = 0;
};

inline std::span<double> view(Vector& buf, Tensor t) {
    return {buf.data() + t.offset, t.size()};
}
inline std::span<const double> view(const Vector& buf, Tensor t) {
    return {buf.data() + t.offset, t.size()};
}

/// C (m x n) = beta*C + alpha * op(A) * op(B), row-major, k is the inner dim.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);

/// y = W x + b  (W is rows x cols, x has cols entries, b may be empty).
void linear(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y, std::size_t rows, std::size_t cols);

/// Accumulates dW += dy x^T, db += dy, dx += W^T dy.
void linear_backward(std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dw, std::span<double> db,
                     std::span<double> dx, std::size_t rows, std::size_t cols);

double sigmoid(double x);
double softplus(double x);

void softmax_inplace(std::span<double> v);

/// Given y = softmax(x) and upstream dy, accumulates dx += J^T dy.
void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> dx);

struct LayerNormCache {
    Vector normalized;  // (x - mean) / sqrt(var + eps), per row
    Vector inv_std;     // per row
};

/// Row-wise layer normalization with learned gain/bias over `width` features.
void layer_norm(std::span<const double> x, std::span<const double> gain,
                std::span<const double> bias, std::span<double> y, std::size_t rows,
                std::size_t width, LayerNormCache& cache);

void layer_norm_backward(std::span<const double> gain, const LayerNormCache& cache,
                         std::span<const double> dy, std::span<double> dgain,
                         std::span<double> dbias, std::span<double> dx, std::size_t rows,
                         std::size_t width);

/// SGD with classical momentum and global-norm gradient clipping.
class SgdMomentum {
public:
    void step(Vector& params, const Vector& grad, double learning_rate, double momentum,
              double clip_norm);

private:
    Vector velocity_;
};

/// Fills a tensor slot with Normal(0, 1/sqrt(fan_in)) entries.
void init_normal(Vector& params, Tensor t, std::size_t fan_in, RandomSource& rng);

}  // namespace drtsad::nn
