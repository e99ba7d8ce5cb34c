#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "drtsad/dataset.hpp"
#include "drtsad/evaluation.hpp"
#include "drtsad/matrix.hpp"
#include "drtsad/nn.hpp"

namespace drtsad {

struct TransformerConfig {
    std::size_t window = 100;  // N, positions per attention window
    std::size_t layers = 3;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    double lambda = 3.0;      // association-discrepancy weight in the minimax loss
    double smoothing = 1e-8;  // additive smoothing inside the discrepancy
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    double anomaly_ratio = 0.10;  // handed to evaluation's ratio policy
};

/// Windowed transformer encoder whose attention layers expose a learned
/// series association S and a Gaussian-kernel prior association P with a
/// learnable per-position scale.
class TransformerModel {
public:
    TransformerModel() = default;
    TransformerModel(std::size_t input_dim, const TransformerConfig& cfg);

    std::size_t input_dim() const { return input_dim_; }
    const TransformerConfig& config() const { return cfg_; }

    struct LayerTensors {
        nn::Tensor w_q, w_k, w_v;      // d_model x d_model, bias-free
        nn::Tensor w_o, b_o;           // output projection
        nn::Tensor w_sigma, b_sigma;   // d_model x heads prior-scale head (softplus)
        nn::Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        nn::Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    };

    TransformerConfig cfg_;
    std::size_t input_dim_ = 0;
    std::vector<LayerTensors> layers;
    nn::Tensor emb_w, emb_b;  // input embedding m -> d_model
    nn::Tensor out_w, out_b;  // reconstruction head d_model -> m
    Vector params;
    Vector loss_trace;  // per-epoch mean reconstruction loss
};

/// Row-stochastic Gaussian prior over temporal distance: row i proportional
/// to exp(-(i-j)^2 / (2 sigma_i^2)).
Matrix prior_association(std::size_t n, const Vector& sigma);

/// Eq-style association discrepancy: average heads per layer, additive
/// smoothing + renormalization (disabled when smoothing < 0, in which case
/// support mismatches raise InfiniteDivergence), symmetric KL per row, mean
/// over layers. Shapes: layers x heads x (N x N), rows stochastic.
Vector association_discrepancy(const std::vector<std::vector<Matrix>>& p_layers,
                               const std::vector<std::vector<Matrix>>& s_layers,
                               double smoothing);

/// Per-position anomaly criterion: softmax(-assdis) elementwise times the
/// per-position mean squared reconstruction residual.
Vector criterion(const Vector& assdis, const Matrix& x, const Matrix& xhat);

/// Associations captured from a forward pass; passing them back freezes one
/// side of the discrepancy for the stop-gradient phases.
struct Associations {
    std::vector<std::vector<Matrix>> prior;   // layers x heads x (N x N)
    std::vector<std::vector<Matrix>> series;  // layers x heads x (N x N)
};

enum class MinimaxPhase {
    MinimizeDiscrepancy,  // recon - lambda * assdis, prior frozen
    MaximizeDiscrepancy,  // recon + lambda * assdis, series frozen inside assdis
};

/// Mean phase loss over a batch of windows (each N x m). When `frozen` is
/// null the associations computed by the same forward pass are treated as the
/// frozen side, which is the training behavior; a non-null `frozen` pins them
/// to externally captured constants so finite differences can audit the
/// backward pass. Fills `grad` when non-null; `captured` (optional) receives
/// the live associations of the last window.
double transformer_batch_objective(const TransformerModel& model, const Vector& params,
                                   const std::vector<Matrix>& windows, MinimaxPhase phase,
                                   const Associations* frozen, Vector* grad,
                                   Associations* captured = nullptr);

struct TransformerScoreParts {
    Vector criterion_series;  // per position, length = window rows
    Vector assdis;            // per position
    Matrix reconstruction;    // N x m
};

/// Full forward pass on one window returning everything scoring needs.
TransformerScoreParts transformer_forward_window(const TransformerModel& model,
                                                 const Matrix& window);

/// Two-phase minimax training on non-overlapping train windows.
TransformerModel train_minimax(const TimeSeriesDataset& ds, const TransformerConfig& cfg);

/// Non-overlapping inference windows; a final partial window is left-padded
/// by repeating its first row and the pad positions are discarded.
AnomalyScoreSeries score_series(const TransformerModel& model, const TimeSeriesDataset& ds);

void save_transformer(const TransformerModel& model, const std::filesystem::path& dir);
TransformerModel load_transformer(const std::filesystem::path& dir);

}  // namespace drtsad
