#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "drtsad/dataset.hpp"
#include "drtsad/matrix.hpp"
#include "drtsad/rng.hpp"

namespace drtsad {

enum class ReducerKind { PCA, RandomProjection, UMAP, TSNE };

const char* reducer_kind_name(ReducerKind k);
ReducerKind reducer_kind_from_name(const std::string& name);

struct UmapParams {
    std::size_t n_neighbors = 15;
    double min_dist = 0.1;
    std::size_t epochs = 200;
    double learning_rate = 1.0;
    std::size_t negative_samples = 5;
};

struct TsneParams {
    double perplexity = 30.0;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    std::size_t total_iters = 1000;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
};

enum class FitOn { Train, Joint };

struct ReducerSpec {
    ReducerKind kind = ReducerKind::PCA;
    std::size_t target_dim = 2;
    std::uint64_t seed = 1;
    UmapParams umap;
    TsneParams tsne;
    FitOn fit_on = FitOn::Train;     // PCA/RP/UMAP; t-SNE is always transductive
    std::size_t sample_cap = 20000;  // row cap for the exact UMAP/t-SNE machinery
};

struct PcaPayload {
    Vector mean;
    Matrix components;   // n x m, orthonormal columns
    Vector eigenvalues;  // full spectrum, descending
};

struct RpPayload {
    Matrix projection;  // n x m, entries i.i.d. Normal(0, 1/m)
};

struct UmapPayload {
    Matrix train_points;  // rows the embedding was fitted on
    Matrix embedding;     // same row count, m columns
    double curve_a = 0.0;
    double curve_b = 0.0;
    Vector rho;    // per-point nearest-neighbor offset
    Vector sigma;  // per-point membership bandwidth
};

struct TsnePayload {
    Matrix embedding;  // train rows then test rows
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    Vector beta;  // per-point precision from the perplexity search
};

struct FittedReducer {
    ReducerSpec spec;
    std::size_t input_dim = 0;
    Vector objective_trace;             // UMAP: per-recorded-epoch Eq-style loss;
                                        // t-SNE: per-iteration KL against the true P
    std::size_t trace_post_start = 0;   // t-SNE: first post-exaggeration trace index
    std::variant<PcaPayload, RpPayload, UmapPayload, TsnePayload> payload;
};

/// Top-m covariance eigenvectors by descending eigenvalue. Deterministic via
/// the eigensolver's sign convention. Requires 1 <= m <= n and >= 2 rows.
FittedReducer fit_pca(const Matrix& train, std::size_t m);

/// Gaussian projection matrix, entries Normal(0, 1/m) so squared norms are
/// preserved in expectation. Requires 1 <= m < n.
FittedReducer fit_random_projection(std::size_t n, std::size_t m, RandomSource& rng);

/// PCA: (X - mean) * components. RP: X * R.
Matrix transform_linear(const FittedReducer& fr, const Matrix& data);

/// Exact-kNN UMAP: fuzzy memberships with local connectivity, symmetrized
/// graph, least-squares (a, b) curve, PCA init scaled to [-10, 10], SGD with
/// negative sampling. epochs = 0 returns the initialization unchanged.
FittedReducer fit_umap(const Matrix& train, const ReducerSpec& spec);

/// Out-of-sample UMAP: membership-weighted average of the nearest fitted
/// points' embeddings (an exact match snaps to its own embedding), then
/// epochs/4 refinement steps against the frozen training embedding.
Matrix transform_umap(const FittedReducer& fr, const Matrix& data);

/// Exact joint t-SNE over [train; test] (transductive). Per-point bandwidths
/// solved so the perplexity matches the spec within 1e-4; early exaggeration and
/// momentum switch per the configured schedule. Throws TooLargeForExact above
/// the row cap and requires m <= 3.
FittedReducer fit_tsne_joint(const Matrix& train, const Matrix& test, const ReducerSpec& spec);

/// Fits per the technique's policy and produces the m-dimensional dataset.
/// Labels and row counts are untouched; the manifest is rewritten to m dims.
TimeSeriesDataset reduce_dataset(const TimeSeriesDataset& ds, const ReducerSpec& spec);

void save_reducer(const FittedReducer& fr, const std::filesystem::path& dir);
FittedReducer load_reducer(const std::filesystem::path& dir);

// --- exposed internals used by diagnostics and oracle tests ---

struct TsneAffinities {
    Matrix conditional;  // row-stochastic p_{j|i}
    Matrix joint;        // symmetric p_ij, sums to 1
    Vector beta;
};
TsneAffinities tsne_affinities(const Matrix& points, double perplexity);

struct UmapEdge {
    std::size_t i = 0, j = 0;
    double weight = 0.0;
};
struct UmapGraph {
    std::vector<UmapEdge> edges;  // i < j, symmetrized weights
    Vector rho;
    Vector sigma;
};
UmapGraph umap_fuzzy_graph(const Matrix& points, std::size_t n_neighbors);

/// Least-squares fit of (1 + a d^(2b))^-1 to the min_dist offset curve.
std::pair<double, double> umap_fit_curve(double min_dist);

}  // namespace drtsad
