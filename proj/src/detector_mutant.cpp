#include "drtsad/detector_mutant.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <fstream>

#include <json.hpp>

#include "drtsad/errors.hpp"

namespace drtsad {

using nn::Tensor;
using nn::view;

FeatureGraph build_feature_graph(const Matrix& window, double tau) {
    const std::size_t rows = window.rows();
    const std::size_t d = window.cols();
    if (rows < 2) throw PreconditionViolation("build_feature_graph: window needs >= 2 rows");

    // Column statistics; constant columns get correlation 0 by convention.
    Vector mean(d, 0.0), sxx(d, 0.0);
    std::vector<bool> constant(d, true);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t t = 1; t < rows; ++t)
            if (window(t, j) != window(0, j)) {
                constant[j] = false;
                break;
            }
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t j = 0; j < d; ++j) mean[j] += window(t, j);
    for (double& v : mean) v /= static_cast<double>(rows);
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = window(t, j) - mean[j];
            sxx[j] += c * c;
        }

    FeatureGraph g;
    g.correlations = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) g.correlations(i, i) = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            double rho = 0.0;
            if (!constant[i] && !constant[j] && sxx[i] > 0.0 && sxx[j] > 0.0) {
                double sxy = 0.0;
                for (std::size_t t = 0; t < rows; ++t)
                    sxy += (window(t, i) - mean[i]) * (window(t, j) - mean[j]);
                rho = std::clamp(sxy / std::sqrt(sxx[i] * sxx[j]), -1.0, 1.0);
            }
            g.correlations(i, j) = rho;
            g.correlations(j, i) = rho;
        }
    }

    // Thresholded |rho| adjacency with self-loops, then D^(-1/2) A D^(-1/2).
    Matrix adj(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        adj(i, i) = 1.0;
        for (std::size_t j = i + 1; j < d; ++j) {
            const double w = std::abs(g.correlations(i, j));
            const double edge = w >= tau ? w : 0.0;
            adj(i, j) = edge;
            adj(j, i) = edge;
        }
    }
    Vector inv_sqrt_degree(d);
    for (std::size_t i = 0; i < d; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < d; ++j) deg += adj(i, j);
        inv_sqrt_degree[i] = 1.0 / std::sqrt(deg);
    }
    g.normalized_adjacency = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            g.normalized_adjacency(i, j) = inv_sqrt_degree[i] * adj(i, j) * inv_sqrt_degree[j];
    return g;
}

Matrix gcn_forward(const FeatureGraph& graph, const Matrix& h, const Matrix& w) {
    const std::size_t d = graph.normalized_adjacency.rows();
    if (h.rows() != d) throw DimensionMismatch("gcn_forward: node count mismatch");
    if (w.rows() != h.cols()) throw DimensionMismatch("gcn_forward: weight shape mismatch");
    Matrix out = matmul(matmul(graph.normalized_adjacency, h), w);
    for (double& v : out.data()) v = std::max(v, 0.0);
    return out;
}

MutantModel::MutantModel(std::size_t input_dim, const MutantConfig& cfg)
    : cfg_(cfg), input_dim_(input_dim) {
    const std::size_t L = cfg.window_length;
    const std::size_t g = cfg.gcn_dim;
    const std::size_t H = cfg.lstm_hidden;
    const std::size_t zd = cfg.latent_dim;
    const std::size_t hd = 2 * zd;
    const std::size_t eg = input_dim * g;
    const std::size_t out_len = input_dim * L;
    if (cfg.gcn_layers < 1)
        throw PreconditionViolation("MutantModel: need at least one GCN layer");

    nn::Arena arena;
    gcn_w.push_back(arena.matrix(L, g));
    for (std::size_t l = 1; l < cfg.gcn_layers; ++l) gcn_w.push_back(arena.matrix(g, g));
    w_f = arena.matrix(H, H + g);
    b_f = arena.vector(H);
    w_i = arena.matrix(H, H + g);
    b_i = arena.vector(H);
    w_o = arena.matrix(H, H + g);
    b_o = arena.vector(H);
    w_c = arena.matrix(H, H + g);
    b_c = arena.vector(H);
    attn_proj = arena.vector(g + H);
    enc_w1 = arena.matrix(hd, eg);
    enc_b1 = arena.vector(hd);
    enc_wmu = arena.matrix(zd, hd);
    enc_bmu = arena.vector(zd);
    enc_wlv = arena.matrix(zd, hd);
    enc_blv = arena.vector(zd);
    dec_w1 = arena.matrix(hd, zd);
    dec_b1 = arena.vector(hd);
    dec_w2 = arena.matrix(out_len, hd);
    dec_b2 = arena.vector(out_len);

    params.assign(arena.total(), 0.0);
    RandomSource rng(cfg.seed);
    nn::init_normal(params, gcn_w[0], L, rng);
    for (std::size_t l = 1; l < cfg.gcn_layers; ++l) nn::init_normal(params, gcn_w[l], g, rng);
    for (Tensor t : {w_f, w_i, w_o, w_c}) nn::init_normal(params, t, H + g, rng);
    nn::init_normal(params, attn_proj, g + H, rng);
    nn::init_normal(params, enc_w1, eg, rng);
    nn::init_normal(params, enc_wmu, hd, rng);
    nn::init_normal(params, enc_wlv, hd, rng);
    nn::init_normal(params, dec_w1, zd, rng);
    nn::init_normal(params, dec_w2, hd, rng);
}

namespace {

struct WindowCache {
    std::vector<Matrix> activations;  // [0] = node features, then per GCN layer
    std::vector<Matrix> messages;     // A_norm * activations[l]
    Vector pooled;                    // g
    Vector concat;                    // [h_prev; pooled]
    Vector gate_f, gate_i, gate_o, candidate;
    Vector cell, tanh_cell, hidden;
    Vector alpha;    // d
    Vector enc_in;   // d*g (the flattened top GCN activation)
    Vector a1, mu, lv, zs, a2;
    Vector xhat;          // d*L
    Vector per_var_err;   // d
    double recon = 0.0;
    double kl = 0.0;
};

// Runs one window through GCN -> pooling -> LSTM -> attention -> VAE.
// `epsilon` empty means "use the posterior mean" (deterministic scoring).
void forward_window(const MutantModel& model, const Vector& params, const PreparedWindow& pw,
                    const Vector& h_prev, const Vector& c_prev,
                    std::span<const double> epsilon, WindowCache& cache) {
    const MutantConfig& cfg = model.config();
    const std::size_t d = model.input_dim();
    const std::size_t L = cfg.window_length;
    const std::size_t g = cfg.gcn_dim;
    const std::size_t H = cfg.lstm_hidden;
    const std::size_t zd = cfg.latent_dim;
    const std::size_t hd = 2 * zd;

    // GCN stack.
    cache.activations.assign(1, pw.node_features);
    cache.messages.clear();
    for (std::size_t l = 0; l < cfg.gcn_layers; ++l) {
        const Matrix& h = cache.activations.back();
        const std::size_t fin = h.cols();
        const std::size_t fout = model.gcn_w[l].cols;
        Matrix msg(d, fin);
        nn::gemm(false, false, d, fin, d, 1.0, pw.graph.normalized_adjacency.data().data(), d,
                 h.data().data(), fin, 0.0, msg.data().data(), fin);
        Matrix z(d, fout);
        nn::gemm(false, false, d, fout, fin, 1.0, msg.data().data(), fin,
                 view(params, model.gcn_w[l]).data(), fout, 0.0, z.data().data(), fout);
        for (double& v : z.data()) v = std::max(v, 0.0);
        cache.messages.push_back(std::move(msg));
        cache.activations.push_back(std::move(z));
    }
    const Matrix& top = cache.activations.back();

    // Mean-pool nodes into the LSTM input.
    cache.pooled.assign(g, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t a = 0; a < g; ++a) cache.pooled[a] += top(i, a);
    for (double& v : cache.pooled) v /= static_cast<double>(d);

    cache.concat.assign(H + g, 0.0);
    std::copy(h_prev.begin(), h_prev.end(), cache.concat.begin());
    std::copy(cache.pooled.begin(), cache.pooled.end(), cache.concat.begin() + H);

    const auto gate = [&](Tensor w, Tensor b, Vector& out, bool use_tanh) {
        out.assign(H, 0.0);
        nn::linear(view(params, w), view(params, b), cache.concat, out, H, H + g);
        for (double& v : out) v = use_tanh ? std::tanh(v) : nn::sigmoid(v);
    };
    gate(model.w_f, model.b_f, cache.gate_f, false);
    gate(model.w_i, model.b_i, cache.gate_i, false);
    gate(model.w_o, model.b_o, cache.gate_o, false);
    gate(model.w_c, model.b_c, cache.candidate, true);

    cache.cell.assign(H, 0.0);
    cache.tanh_cell.assign(H, 0.0);
    cache.hidden.assign(H, 0.0);
    for (std::size_t j = 0; j < H; ++j) {
        cache.cell[j] = cache.gate_f[j] * c_prev[j] + cache.gate_i[j] * cache.candidate[j];
        cache.tanh_cell[j] = std::tanh(cache.cell[j]);
        cache.hidden[j] = cache.gate_o[j] * cache.tanh_cell[j];
    }

    // Attention over variables.
    const auto proj = view(params, model.attn_proj);
    cache.alpha.assign(d, 0.0);
    double proj_h_dot = 0.0;
    for (std::size_t j = 0; j < H; ++j) proj_h_dot += proj[g + j] * cache.hidden[j];
    for (std::size_t i = 0; i < d; ++i) {
        double s = proj_h_dot;
        for (std::size_t a = 0; a < g; ++a) s += proj[a] * top(i, a);
        cache.alpha[i] = s;
    }
    nn::softmax_inplace(cache.alpha);

    // VAE on the flattened embedding; reconstruction targets the raw window.
    cache.enc_in = top.data();
    cache.a1.assign(hd, 0.0);
    nn::linear(view(params, model.enc_w1), view(params, model.enc_b1), cache.enc_in, cache.a1,
               hd, d * g);
    for (double& v : cache.a1) v = std::tanh(v);
    cache.mu.assign(zd, 0.0);
    cache.lv.assign(zd, 0.0);
    nn::linear(view(params, model.enc_wmu), view(params, model.enc_bmu), cache.a1, cache.mu, zd,
               hd);
    nn::linear(view(params, model.enc_wlv), view(params, model.enc_blv), cache.a1, cache.lv, zd,
               hd);
    cache.zs.assign(zd, 0.0);
    for (std::size_t j = 0; j < zd; ++j)
        cache.zs[j] =
            cache.mu[j] + (epsilon.empty() ? 0.0 : std::exp(0.5 * cache.lv[j]) * epsilon[j]);

    cache.a2.assign(hd, 0.0);
    nn::linear(view(params, model.dec_w1), view(params, model.dec_b1), cache.zs, cache.a2, hd,
               zd);
    for (double& v : cache.a2) v = std::tanh(v);
    cache.xhat.assign(d * L, 0.0);
    nn::linear(view(params, model.dec_w2), view(params, model.dec_b2), cache.a2, cache.xhat,
               d * L, hd);

    cache.per_var_err.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            const double r = cache.xhat[i * L + l] - pw.window(l, i);
            acc += r * r;
        }
        cache.per_var_err[i] = acc / static_cast<double>(L);
    }
    cache.recon = dot(cache.alpha, cache.per_var_err);
    cache.kl = 0.0;
    for (std::size_t j = 0; j < zd; ++j)
        cache.kl += 0.5 * (cache.mu[j] * cache.mu[j] + std::exp(cache.lv[j]) - 1.0 -
                           cache.lv[j]);
}

}  // namespace

std::vector<Vector> lstm_attention(const MutantModel& model,
                                   const std::vector<Matrix>& window_embeddings) {
    if (window_embeddings.empty())
        throw PreconditionViolation("lstm_attention: empty embedding sequence");
    const MutantConfig& cfg = model.config();
    const std::size_t d = model.input_dim();
    const std::size_t g = cfg.gcn_dim;
    const std::size_t H = cfg.lstm_hidden;
    const Vector& params = model.params;

    std::vector<Vector> alphas;
    Vector h(H, 0.0), c(H, 0.0), concat(H + g);
    Vector gate_f(H), gate_i(H), gate_o(H), cand(H);
    for (const Matrix& emb : window_embeddings) {
        if (emb.rows() != d || emb.cols() != g)
            throw DimensionMismatch("lstm_attention: embedding shape mismatch");
        Vector pooled(g, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t a = 0; a < g; ++a) pooled[a] += emb(i, a);
        for (double& v : pooled) v /= static_cast<double>(d);
        std::copy(h.begin(), h.end(), concat.begin());
        std::copy(pooled.begin(), pooled.end(), concat.begin() + H);

        const auto gate = [&](Tensor w, Tensor b, Vector& out, bool use_tanh) {
            nn::linear(view(params, w), view(params, b), concat, out, H, H + g);
            for (double& v : out) v = use_tanh ? std::tanh(v) : nn::sigmoid(v);
        };
        gate(model.w_f, model.b_f, gate_f, false);
        gate(model.w_i, model.b_i, gate_i, false);
        gate(model.w_o, model.b_o, gate_o, false);
        gate(model.w_c, model.b_c, cand, true);
        for (std::size_t j = 0; j < H; ++j) {
            c[j] = gate_f[j] * c[j] + gate_i[j] * cand[j];
            h[j] = gate_o[j] * std::tanh(c[j]);
        }

        const auto proj = view(params, model.attn_proj);
        double proj_h_dot = 0.0;
        for (std::size_t j = 0; j < H; ++j) proj_h_dot += proj[g + j] * h[j];
        Vector alpha(d);
        for (std::size_t i = 0; i < d; ++i) {
            double s = proj_h_dot;
            for (std::size_t a = 0; a < g; ++a) s += proj[a] * emb(i, a);
            alpha[i] = s;
        }
        nn::softmax_inplace(alpha);
        alphas.push_back(std::move(alpha));
    }
    return alphas;
}

VaeResult vae_elbo(const MutantModel& model, const Matrix& window_embedding,
                   const Vector& attention, const Matrix& target, const Vector& epsilon) {
    const MutantConfig& cfg = model.config();
    const std::size_t d = model.input_dim();
    const std::size_t L = cfg.window_length;
    const std::size_t g = cfg.gcn_dim;
    const std::size_t zd = cfg.latent_dim;
    const std::size_t hd = 2 * zd;
    if (window_embedding.rows() != d || window_embedding.cols() != g)
        throw DimensionMismatch("vae_elbo: embedding shape mismatch");
    if (attention.size() != d) throw DimensionMismatch("vae_elbo: attention length mismatch");
    if (target.rows() != L || target.cols() != d)
        throw DimensionMismatch("vae_elbo: target shape mismatch");
    const Vector& params = model.params;

    Vector a1(hd, 0.0);
    nn::linear(view(params, model.enc_w1), view(params, model.enc_b1), window_embedding.data(),
               a1, hd, d * g);
    for (double& v : a1) v = std::tanh(v);
    Vector mu(zd, 0.0), lv(zd, 0.0);
    nn::linear(view(params, model.enc_wmu), view(params, model.enc_bmu), a1, mu, zd, hd);
    nn::linear(view(params, model.enc_wlv), view(params, model.enc_blv), a1, lv, zd, hd);
    Vector zs(zd);
    for (std::size_t j = 0; j < zd; ++j)
        zs[j] = mu[j] + (epsilon.empty() ? 0.0 : std::exp(0.5 * lv[j]) * epsilon[j]);
    Vector a2(hd, 0.0);
    nn::linear(view(params, model.dec_w1), view(params, model.dec_b1), zs, a2, hd, zd);
    for (double& v : a2) v = std::tanh(v);
    Vector xhat(d * L, 0.0);
    nn::linear(view(params, model.dec_w2), view(params, model.dec_b2), a2, xhat, d * L, hd);

    VaeResult out;
    out.reconstruction = Matrix(d, L);
    std::copy(xhat.begin(), xhat.end(), out.reconstruction.data().begin());
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            const double r = xhat[i * L + l] - target(l, i);
            acc += r * r;
        }
        out.reconstruction_term += attention[i] * acc / static_cast<double>(L);
    }
    for (std::size_t j = 0; j < zd; ++j)
        out.kl_term += 0.5 * (mu[j] * mu[j] + std::exp(lv[j]) - 1.0 - lv[j]);
    out.loss = out.reconstruction_term + out.kl_term;
    if (!std::isfinite(out.loss)) throw TrainingDiverged("vae_elbo: non-finite loss");
    return out;
}

std::vector<PreparedWindow> prepare_windows(const Matrix& series, const MutantConfig& cfg,
                                            bool cover_tail) {
    auto windows = make_windows(series, {cfg.window_length, cfg.stride});
    if (cover_tail) {
        const std::size_t covered = windows.back().start + cfg.window_length;
        if (covered < series.rows()) {
            const std::size_t start = series.rows() - cfg.window_length;
            windows.push_back({start, rows_slice(series, start, cfg.window_length)});
        }
    }
    std::vector<PreparedWindow> out;
    out.reserve(windows.size());
    for (auto& w : windows) {
        PreparedWindow pw;
        pw.start = w.start;
        pw.graph = build_feature_graph(w.data, cfg.correlation_threshold);
        pw.node_features = transpose(w.data);
        pw.window = std::move(w.data);
        out.push_back(std::move(pw));
    }
    return out;
}

double mutant_chunk_objective(const MutantModel& model, const Vector& params,
                              const std::vector<PreparedWindow>& windows,
                              const std::vector<Vector>& epsilons, Vector* grad) {
    const MutantConfig& cfg = model.config();
    const std::size_t d = model.input_dim();
    const std::size_t L = cfg.window_length;
    const std::size_t g = cfg.gcn_dim;
    const std::size_t H = cfg.lstm_hidden;
    const std::size_t zd = cfg.latent_dim;
    const std::size_t hd = 2 * zd;
    const std::size_t B = windows.size();
    if (B == 0) throw PreconditionViolation("mutant_chunk_objective: no windows");
    if (!epsilons.empty() && epsilons.size() != B)
        throw DimensionMismatch("mutant_chunk_objective: epsilon count mismatch");

    std::vector<WindowCache> caches(B);
    Vector h(H, 0.0), c(H, 0.0);
    double loss = 0.0;
    for (std::size_t t = 0; t < B; ++t) {
        const std::span<const double> eps =
            epsilons.empty() ? std::span<const double>{} : std::span<const double>(epsilons[t]);
        forward_window(model, params, windows[t], h, c, eps, caches[t]);
        h = caches[t].hidden;
        c = caches[t].cell;
        loss += caches[t].recon + caches[t].kl;
    }
    loss /= static_cast<double>(B);
    if (grad == nullptr) return loss;

    grad->assign(params.size(), 0.0);
    const double wB = 1.0 / static_cast<double>(B);

    // Per-window paths that do not cross time: VAE and attention. Each yields
    // a node-embedding gradient and the attention path's hidden-state pull.
    std::vector<Matrix> d_top(B, Matrix(d, g));
    std::vector<Vector> dh_attn(B, Vector(H, 0.0));
    Vector dmu(zd), dlv(zd), dzs(zd), da1(hd), dpre(hd), dxhat(d * L), denc(d * g);
    Vector dalpha(d), dscore(d), da2(hd);

    for (std::size_t t = 0; t < B; ++t) {
        WindowCache& cc = caches[t];
        const Matrix& top = cc.activations.back();

        // KL term.
        for (std::size_t j = 0; j < zd; ++j) {
            dmu[j] = wB * cc.mu[j];
            dlv[j] = wB * 0.5 * (std::exp(cc.lv[j]) - 1.0);
        }
        // Reconstruction term.
        std::fill(dalpha.begin(), dalpha.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) dalpha[i] = wB * cc.per_var_err[i];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t l = 0; l < L; ++l)
                dxhat[i * L + l] = wB * cc.alpha[i] * 2.0 / static_cast<double>(L) *
                                   (cc.xhat[i * L + l] - windows[t].window(l, i));

        // Decoder.
        std::fill(da2.begin(), da2.end(), 0.0);
        nn::linear_backward(view(params, model.dec_w2), cc.a2, dxhat,
                            view(*grad, model.dec_w2), view(*grad, model.dec_b2), da2, d * L,
                            hd);
        for (std::size_t j = 0; j < hd; ++j) dpre[j] = da2[j] * (1.0 - cc.a2[j] * cc.a2[j]);
        std::fill(dzs.begin(), dzs.end(), 0.0);
        nn::linear_backward(view(params, model.dec_w1), cc.zs, dpre, view(*grad, model.dec_w1),
                            view(*grad, model.dec_b1), dzs, hd, zd);
        const bool sampled = !epsilons.empty();
        for (std::size_t j = 0; j < zd; ++j) {
            dmu[j] += dzs[j];
            if (sampled)
                dlv[j] += dzs[j] * epsilons[t][j] * 0.5 * std::exp(0.5 * cc.lv[j]);
        }
        // Encoder heads.
        std::fill(da1.begin(), da1.end(), 0.0);
        nn::linear_backward(view(params, model.enc_wmu), cc.a1, dmu,
                            view(*grad, model.enc_wmu), view(*grad, model.enc_bmu), da1, zd, hd);
        nn::linear_backward(view(params, model.enc_wlv), cc.a1, dlv,
                            view(*grad, model.enc_wlv), view(*grad, model.enc_blv), da1, zd, hd);
        for (std::size_t j = 0; j < hd; ++j) dpre[j] = da1[j] * (1.0 - cc.a1[j] * cc.a1[j]);
        std::fill(denc.begin(), denc.end(), 0.0);
        nn::linear_backward(view(params, model.enc_w1), cc.enc_in, dpre,
                            view(*grad, model.enc_w1), view(*grad, model.enc_b1), denc, hd,
                            d * g);
        std::copy(denc.begin(), denc.end(), d_top[t].data().begin());

        // Attention (softmax over variables).
        std::fill(dscore.begin(), dscore.end(), 0.0);
        nn::softmax_backward(cc.alpha, dalpha, dscore);
        auto dproj = view(*grad, model.attn_proj);
        const auto proj = view(params, model.attn_proj);
        double score_sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            score_sum += dscore[i];
            for (std::size_t a = 0; a < g; ++a) {
                dproj[a] += dscore[i] * top(i, a);
                d_top[t](i, a) += dscore[i] * proj[a];
            }
        }
        for (std::size_t j = 0; j < H; ++j) {
            dproj[g + j] += score_sum * cc.hidden[j];
            dh_attn[t][j] = score_sum * proj[g + j];
        }
    }

    // LSTM backward through time, feeding the pooling gradient into d_top.
    Vector dh_next(H, 0.0), dc_next(H, 0.0);
    Vector dgate(H), dconcat(H + g);
    for (std::size_t ti = B; ti-- > 0;) {
        WindowCache& cc = caches[ti];
        const Vector& c_prev = ti == 0 ? Vector(H, 0.0) : caches[ti - 1].cell;

        Vector dh(H), dc(H);
        for (std::size_t j = 0; j < H; ++j) {
            dh[j] = dh_attn[ti][j] + dh_next[j];
            dc[j] = dc_next[j] +
                    dh[j] * cc.gate_o[j] * (1.0 - cc.tanh_cell[j] * cc.tanh_cell[j]);
        }
        std::fill(dconcat.begin(), dconcat.end(), 0.0);

        const auto gate_back = [&](const Vector& gate_out, const Vector& dgate_out, Tensor w,
                                   Tensor b, bool is_tanh) {
            for (std::size_t j = 0; j < H; ++j)
                dgate[j] = is_tanh ? dgate_out[j] * (1.0 - gate_out[j] * gate_out[j])
                                   : dgate_out[j] * gate_out[j] * (1.0 - gate_out[j]);
            nn::linear_backward(view(params, w), cc.concat, dgate, view(*grad, w),
                                view(*grad, b), dconcat, H, H + g);
        };
        Vector tmp(H);
        for (std::size_t j = 0; j < H; ++j) tmp[j] = dh[j] * cc.tanh_cell[j];
        gate_back(cc.gate_o, tmp, model.w_o, model.b_o, false);
        for (std::size_t j = 0; j < H; ++j) tmp[j] = dc[j] * c_prev[j];
        gate_back(cc.gate_f, tmp, model.w_f, model.b_f, false);
        for (std::size_t j = 0; j < H; ++j) tmp[j] = dc[j] * cc.candidate[j];
        gate_back(cc.gate_i, tmp, model.w_i, model.b_i, false);
        for (std::size_t j = 0; j < H; ++j) tmp[j] = dc[j] * cc.gate_i[j];
        gate_back(cc.candidate, tmp, model.w_c, model.b_c, true);

        for (std::size_t j = 0; j < H; ++j) {
            dh_next[j] = dconcat[j];
            dc_next[j] = dc[j] * cc.gate_f[j];
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t a = 0; a < g; ++a)
                d_top[ti](i, a) += dconcat[H + a] / static_cast<double>(d);
    }

    // GCN backward per window.
    Matrix dz, dmsg, dh_lower;
    for (std::size_t t = 0; t < B; ++t) {
        WindowCache& cc = caches[t];
        Matrix dh_upper = std::move(d_top[t]);
        for (std::size_t l = cfg.gcn_layers; l-- > 0;) {
            const Matrix& act = cc.activations[l + 1];
            const Matrix& msg = cc.messages[l];
            const std::size_t fin = msg.cols();
            const std::size_t fout = act.cols();
            dz = dh_upper;
            for (std::size_t idx = 0; idx < dz.data().size(); ++idx)
                if (act.data()[idx] <= 0.0) dz.data()[idx] = 0.0;
            nn::gemm(true, false, fin, fout, d, 1.0, msg.data().data(), fin, dz.data().data(),
                     fout, 1.0, view(*grad, model.gcn_w[l]).data(), fout);
            if (l == 0) break;  // input features carry no gradient
            dmsg = Matrix(d, fin);
            nn::gemm(false, true, d, fin, fout, 1.0, dz.data().data(), fout,
                     view(params, model.gcn_w[l]).data(), fout, 0.0, dmsg.data().data(), fin);
            dh_lower = Matrix(d, fin);
            nn::gemm(false, false, d, fin, d, 1.0,
                     windows[t].graph.normalized_adjacency.data().data(), d,
                     dmsg.data().data(), fin, 0.0, dh_lower.data().data(), fin);
            dh_upper = std::move(dh_lower);
        }
    }
    return loss;
}

MutantModel train_mutant(const TimeSeriesDataset& ds, const MutantConfig& cfg) {
    const std::size_t d = ds.train.cols();
    if (d < 8)
        throw DimensionTooLow("train_mutant: input has " + std::to_string(d) +
                              " dimensions; this detector accepts no fewer than 8");
    if (cfg.window_length < 4)
        throw PreconditionViolation("train_mutant: window length must be >= 4");
    if (ds.train.rows() < cfg.window_length)
        throw SeriesTooShort("train_mutant: train split shorter than one window");

    const auto windows = prepare_windows(ds.train, cfg, false);
    MutantModel model(d, cfg);
    nn::SgdMomentum optimizer;
    RandomSource noise = RandomSource(cfg.seed).fork(1);
    Vector grad;

    const std::size_t chunk = std::max<std::size_t>(1, cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
            const std::size_t count = std::min(chunk, windows.size() - begin);
            std::vector<PreparedWindow> slice(windows.begin() + begin,
                                              windows.begin() + begin + count);
            std::vector<Vector> epsilons(count, Vector(cfg.latent_dim));
            for (auto& eps : epsilons)
                for (double& v : eps) v = noise.next_normal();

            const double loss = mutant_chunk_objective(model, model.params, slice, epsilons,
                                                       &grad);
            if (!std::isfinite(loss))
                throw TrainingDiverged("train_mutant: non-finite loss at epoch " +
                                       std::to_string(epoch + 1));
            optimizer.step(model.params, grad, cfg.learning_rate, cfg.momentum, cfg.clip_norm);
            epoch_loss += loss * static_cast<double>(count);
            seen += count;
        }
        model.loss_trace.push_back(epoch_loss / static_cast<double>(seen));
    }
    return model;
}

AnomalyScoreSeries score_mutant(const MutantModel& model, const TimeSeriesDataset& ds) {
    const MutantConfig& cfg = model.config();
    const std::size_t d = model.input_dim();
    if (ds.test.cols() != d)
        throw DimensionMismatch("score_mutant: test has " + std::to_string(ds.test.cols()) +
                                " dims, model expects " + std::to_string(d));
    if (d < 8)
        throw DimensionTooLow("score_mutant: input has " + std::to_string(d) +
                              " dimensions; this detector accepts no fewer than 8");

    const auto windows = prepare_windows(ds.test, cfg, true);
    const std::size_t L = cfg.window_length;
    const std::size_t H = cfg.lstm_hidden;
    const std::size_t T = ds.test.rows();

    Vector sums(T, 0.0);
    std::vector<std::size_t> counts(T, 0);
    Vector h(H, 0.0), c(H, 0.0);
    WindowCache cache;
    for (const auto& pw : windows) {
        forward_window(model, model.params, pw, h, c, {}, cache);
        h = cache.hidden;
        c = cache.cell;
        for (std::size_t l = 0; l < L; ++l) {
            double err = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double r = cache.xhat[i * L + l] - pw.window(l, i);
                err += cache.alpha[i] * r * r;
            }
            sums[pw.start + l] += err;
            counts[pw.start + l] += 1;
        }
    }

    AnomalyScoreSeries out;
    out.detector = "mutant";
    out.config_fingerprint = "mutant:L=" + std::to_string(cfg.window_length) +
                             ":stride=" + std::to_string(cfg.stride) +
                             ":seed=" + std::to_string(cfg.seed);
    out.scores.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        out.scores[t] = counts[t] > 0 ? sums[t] / static_cast<double>(counts[t]) : 0.0;
    return out;
}

void save_mutant(const MutantModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const MutantConfig& c = model.config();
    nlohmann::ordered_json j;
    j["detector"] = "mutant";
    j["input_dim"] = model.input_dim();
    j["window_length"] = c.window_length;
    j["stride"] = c.stride;
    j["correlation_threshold"] = c.correlation_threshold;
    j["gcn_layers"] = c.gcn_layers;
    j["gcn_dim"] = c.gcn_dim;
    j["lstm_hidden"] = c.lstm_hidden;
    j["latent_dim"] = c.latent_dim;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    j["param_count"] = model.params.size();
    std::ofstream meta(dir / "model.json");
    meta << j.dump(2) << '\n';

    std::string bytes;
    bytes.reserve(8 * (model.params.size() + model.loss_trace.size() + 1));
    const auto append = [&bytes](double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    };
    append(static_cast<double>(model.loss_trace.size()));
    for (double v : model.loss_trace) append(v);
    for (double v : model.params) append(v);
    std::ofstream raw(dir / "model.blob", std::ios::binary);
    raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

MutantModel load_mutant(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "model.json");
    if (!meta) throw ParseError("cannot open " + (dir / "model.json").string());
    nlohmann::json j;
    meta >> j;

    MutantConfig c;
    c.window_length = j.at("window_length").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.correlation_threshold = j.at("correlation_threshold").get<double>();
    c.gcn_layers = j.at("gcn_layers").get<std::size_t>();
    c.gcn_dim = j.at("gcn_dim").get<std::size_t>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();

    MutantModel model(j.at("input_dim").get<std::size_t>(), c);

    std::ifstream raw(dir / "model.blob", std::ios::binary);
    if (!raw) throw ParseError("cannot open " + (dir / "model.blob").string());
    std::string bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
    const auto read_at = [&bytes](std::size_t idx) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b)
            bits = (bits << 8) | static_cast<unsigned char>(bytes[8 * idx + static_cast<std::size_t>(b)]);
        return std::bit_cast<double>(bits);
    };
    const std::size_t trace_len = static_cast<std::size_t>(read_at(0));
    if (bytes.size() != 8 * (1 + trace_len + model.params.size()))
        throw ParseError("mutant model blob has unexpected size");
    model.loss_trace.resize(trace_len);
    for (std::size_t i = 0; i < trace_len; ++i) model.loss_trace[i] = read_at(1 + i);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        model.params[i] = read_at(1 + trace_len + i);
    return model;
}

}  // namespace drtsad
