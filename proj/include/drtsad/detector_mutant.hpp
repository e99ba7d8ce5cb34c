#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "drtsad/dataset.hpp"
#include "drtsad/evaluation.hpp"
#include "drtsad/matrix.hpp"
#include "drtsad/nn.hpp"
#include "drtsad/rng.hpp"

namespace drtsad {

/// Per-window variable graph: Pearson correlations thresholded into a
/// self-looped adjacency with symmetric degree normalization.
struct FeatureGraph {
    Matrix normalized_adjacency;  // D^(-1/2) (A + I) D^(-1/2)
    Matrix correlations;          // raw rho, constant columns map to 0
};

struct MutantConfig {
    std::size_t window_length = 64;
    std::size_t stride = 8;
    double correlation_threshold = 0.3;
    std::size_t gcn_layers = 2;
    std::size_t gcn_dim = 32;
    std::size_t lstm_hidden = 32;
    std::size_t latent_dim = 8;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
};

/// Parameter container for the GCN + LSTM-attention + VAE detector.
/// Weights are shared across windows.
class MutantModel {
public:
    MutantModel() = default;
    MutantModel(std::size_t input_dim, const MutantConfig& cfg);

    std::size_t input_dim() const { return input_dim_; }
    const MutantConfig& config() const { return cfg_; }

    MutantConfig cfg_;
    std::size_t input_dim_ = 0;

    // GCN stack: first layer window_length x gcn_dim, then gcn_dim x gcn_dim.
    std::vector<nn::Tensor> gcn_w;
    // LSTM gates over [h_prev; pooled GCN embedding].
    nn::Tensor w_f, b_f, w_i, b_i, w_o, b_o, w_c, b_c;
    // Attention projection over [node embedding; h].
    nn::Tensor attn_proj;
    // VAE: single tanh hidden layer each side, diagonal Gaussian posterior.
    nn::Tensor enc_w1, enc_b1, enc_wmu, enc_bmu, enc_wlv, enc_blv;
    nn::Tensor dec_w1, dec_b1, dec_w2, dec_b2;

    Vector params;
    Vector loss_trace;  // per-epoch mean training loss
};

FeatureGraph build_feature_graph(const Matrix& window, double tau);

/// ReLU(A_norm * H * W).
Matrix gcn_forward(const FeatureGraph& graph, const Matrix& h, const Matrix& w);

/// Runs the LSTM over pooled window embeddings and returns the per-window
/// attention weights over variables (each on the probability simplex).
std::vector<Vector> lstm_attention(const MutantModel& model,
                                   const std::vector<Matrix>& window_embeddings);

struct VaeResult {
    double loss = 0.0;
    double reconstruction_term = 0.0;
    double kl_term = 0.0;
    Matrix reconstruction;  // d x window_length
};

/// Attention-weighted ELBO of one window embedding with the provided
/// reparameterization noise. `target` is the window itself (L x d).
VaeResult vae_elbo(const MutantModel& model, const Matrix& window_embedding,
                   const Vector& attention, const Matrix& target, const Vector& epsilon);

/// Window preprocessed for the detector: graph + transposed node features.
struct PreparedWindow {
    std::size_t start = 0;
    FeatureGraph graph;
    Matrix node_features;  // d x L (window transposed)
    Matrix window;         // L x d
};

std::vector<PreparedWindow> prepare_windows(const Matrix& series, const MutantConfig& cfg,
                                            bool cover_tail);

/// Mean training loss of one chunk of consecutive windows with fixed VAE
/// noise; accumulates the analytic gradient into `grad` when non-null.
/// This is the exact objective the trainer optimizes, exposed so finite
/// differences can audit the backward pass.
double mutant_chunk_objective(const MutantModel& model, const Vector& params,
                              const std::vector<PreparedWindow>& windows,
                              const std::vector<Vector>& epsilons, Vector* grad);

/// Unsupervised training on the train split. Throws DimensionTooLow when the
/// input has fewer than 8 dimensions, TrainingDiverged on non-finite loss.
MutantModel train_mutant(const TimeSeriesDataset& ds, const MutantConfig& cfg);

/// Per-timestep attention-weighted reconstruction error of the test split,
/// averaged over every window covering the timestep. Uses the posterior mean
/// (no sampling), so scoring is deterministic.
AnomalyScoreSeries score_mutant(const MutantModel& model, const TimeSeriesDataset& ds);

void save_mutant(const MutantModel& model, const std::filesystem::path& dir);
MutantModel load_mutant(const std::filesystem::path& dir);

}  // namespace drtsad
