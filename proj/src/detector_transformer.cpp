#include "drtsad/detector_transformer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "drtsad/errors.hpp"
#include "drtsad/numerics.hpp"
#include "drtsad/rng.hpp"

namespace drtsad {

using nn::Tensor;
using nn::view;

namespace {

Matrix sinusoidal_encoding(std::size_t n, std::size_t d_model) {
    Matrix pe(n, d_model);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) /
                                    static_cast<double>(d_model);
            const double rate = std::pow(10000.0, exponent);
            const double angle = static_cast<double>(t) / rate;
            pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

void add_row_bias(Matrix& m, std::span<const double> bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double* row = &m.data()[r * m.cols()];
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] += bias[j];
    }
}

void accumulate_column_sums(const Matrix& m, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(r, j);
}

Matrix head_slice(const Matrix& m, std::size_t head, std::size_t dk) {
    Matrix out(m.rows(), dk);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t j = 0; j < dk; ++j) out(r, j) = m(r, head * dk + j);
    return out;
}

void head_scatter_add(Matrix& target, const Matrix& part, std::size_t head, std::size_t dk) {
    for (std::size_t r = 0; r < part.rows(); ++r)
        for (std::size_t j = 0; j < dk; ++j) target(r, head * dk + j) += part(r, j);
}

}  // namespace

Matrix prior_association(std::size_t n, const Vector& sigma) {
    if (sigma.size() != n) throw DimensionMismatch("prior_association: sigma length != n");
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigma[i] > 0.0))
            throw PreconditionViolation("prior_association: sigma must be positive");
        const double inv = 1.0 / (2.0 * sigma[i] * sigma[i]);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double gap = static_cast<double>(i) - static_cast<double>(j);
            p(i, j) = std::exp(-gap * gap * inv);
            total += p(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) p(i, j) /= total;
    }
    return p;
}

namespace {

Matrix head_mean(const std::vector<Matrix>& heads) {
    Matrix out = heads.front();
    for (std::size_t h = 1; h < heads.size(); ++h)
        for (std::size_t i = 0; i < out.data().size(); ++i)
            out.data()[i] += heads[h].data()[i];
    const double inv = 1.0 / static_cast<double>(heads.size());
    for (double& v : out.data()) v *= inv;
    return out;
}

Matrix smooth_rows(const Matrix& m, double eps) {
    Matrix out = m;
    const double denom = 1.0 + static_cast<double>(m.cols()) * eps;
    for (double& v : out.data()) v = (v + eps) / denom;
    return out;
}

}  // namespace

Vector association_discrepancy(const std::vector<std::vector<Matrix>>& p_layers,
                               const std::vector<std::vector<Matrix>>& s_layers,
                               double smoothing) {
    if (p_layers.size() != s_layers.size() || p_layers.empty())
        throw DimensionMismatch("association_discrepancy: layer count mismatch");
    const std::size_t n = p_layers.front().front().rows();
    Vector out(n, 0.0);
    for (std::size_t l = 0; l < p_layers.size(); ++l) {
        Matrix p = head_mean(p_layers[l]);
        Matrix s = head_mean(s_layers[l]);
        if (smoothing >= 0.0) {
            p = smooth_rows(p, smoothing);
            s = smooth_rows(s, smoothing);
        }
        const Vector forward = kl_divergence_rows(p, s);
        const Vector backward = kl_divergence_rows(s, p);
        for (std::size_t i = 0; i < n; ++i) out[i] += forward[i] + backward[i];
    }
    const double inv = 1.0 / static_cast<double>(p_layers.size());
    for (double& v : out) v *= inv;
    return out;
}

Vector criterion(const Vector& assdis, const Matrix& x, const Matrix& xhat) {
    const std::size_t n = x.rows();
    if (assdis.size() != n || xhat.rows() != n || xhat.cols() != x.cols())
        throw DimensionMismatch("criterion: shape mismatch");
    Vector cad = assdis;
    for (double& v : cad) v = -v;
    Matrix cad_row(1, n);
    std::copy(cad.begin(), cad.end(), cad_row.data().begin());
    const Matrix soft = softmax_rows(cad_row);

    Vector out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double r = x(i, j) - xhat(i, j);
            acc += r * r;
        }
        out[i] = soft(0, i) * acc / static_cast<double>(x.cols());
    }
    return out;
}

TransformerModel::TransformerModel(std::size_t input_dim, const TransformerConfig& cfg)
    : cfg_(cfg), input_dim_(input_dim) {
    const std::size_t dm = cfg.d_model;
    if (cfg.heads == 0 || dm % cfg.heads != 0)
        throw PreconditionViolation("TransformerModel: d_model must be divisible by heads");
    if (cfg.layers == 0) throw PreconditionViolation("TransformerModel: need >= 1 layer");

    nn::Arena arena;
    emb_w = arena.matrix(input_dim, dm);
    emb_b = arena.vector(dm);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerTensors t;
        t.w_q = arena.matrix(dm, dm);
        t.w_k = arena.matrix(dm, dm);
        t.w_v = arena.matrix(dm, dm);
        t.w_o = arena.matrix(dm, dm);
        t.b_o = arena.vector(dm);
        t.w_sigma = arena.matrix(dm, cfg.heads);
        t.b_sigma = arena.vector(cfg.heads);
        t.ln1_gain = arena.vector(dm);
        t.ln1_bias = arena.vector(dm);
        t.ln2_gain = arena.vector(dm);
        t.ln2_bias = arena.vector(dm);
        t.ff_w1 = arena.matrix(dm, cfg.d_ff);
        t.ff_b1 = arena.vector(cfg.d_ff);
        t.ff_w2 = arena.matrix(cfg.d_ff, dm);
        t.ff_b2 = arena.vector(dm);
        layers.push_back(t);
    }
    out_w = arena.matrix(dm, input_dim);
    out_b = arena.vector(input_dim);

    params.assign(arena.total(), 0.0);
    RandomSource rng(cfg.seed);
    nn::init_normal(params, emb_w, input_dim, rng);
    for (const auto& t : layers) {
        for (Tensor w : {t.w_q, t.w_k, t.w_v, t.w_o}) nn::init_normal(params, w, dm, rng);
        nn::init_normal(params, t.w_sigma, dm, rng);
        // softplus(0.5413) ~ 1: priors start near unit scale.
        for (double& v : view(params, t.b_sigma)) v = 0.5413248546129181;
        for (double& v : view(params, t.ln1_gain)) v = 1.0;
        for (double& v : view(params, t.ln2_gain)) v = 1.0;
        nn::init_normal(params, t.ff_w1, dm, rng);
        nn::init_normal(params, t.ff_w2, cfg.d_ff, rng);
    }
    nn::init_normal(params, out_w, dm, rng);
}

namespace {

struct LayerCache {
    Matrix input;  // N x dm
    Matrix q, k, v;
    std::vector<Matrix> series;        // per head, N x N
    std::vector<Matrix> prior;         // per head, N x N
    std::vector<Vector> prior_rowsum;  // per head, unnormalized kernel row sums
    Matrix sigma_raw;                  // N x heads
    Matrix sigma;                      // N x heads
    Matrix attn_concat;                // N x dm
    Matrix attn_out;                   // N x dm
    Matrix e1;                         // after LN1
    Matrix ff_pre, ff_act, ff_out;
    Matrix e2;  // layer output
    nn::LayerNormCache ln1, ln2;
};

struct WindowCache {
    Matrix e0;
    std::vector<LayerCache> layers;
    Matrix xhat;
    double recon = 0.0;
};

void forward_one(const TransformerModel& model, const Vector& params, const Matrix& x,
                 const Matrix& pe, WindowCache& cache) {
    const TransformerConfig& cfg = model.config();
    const std::size_t n = x.rows();
    const std::size_t m = model.input_dim();
    const std::size_t dm = cfg.d_model;
    const std::size_t dk = dm / cfg.heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    cache.e0 = Matrix(n, dm);
    nn::gemm(false, false, n, dm, m, 1.0, x.data().data(), m,
             view(params, model.emb_w).data(), dm, 0.0, cache.e0.data().data(), dm);
    add_row_bias(cache.e0, view(params, model.emb_b));
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < dm; ++j) cache.e0(t, j) += pe(t, j);

    cache.layers.assign(cfg.layers, {});
    const Matrix* current = &cache.e0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = cache.layers[l];
        const auto& t = model.layers[l];
        lc.input = *current;

        lc.q = Matrix(n, dm);
        lc.k = Matrix(n, dm);
        lc.v = Matrix(n, dm);
        nn::gemm(false, false, n, dm, dm, 1.0, lc.input.data().data(), dm,
                 view(params, t.w_q).data(), dm, 0.0, lc.q.data().data(), dm);
        nn::gemm(false, false, n, dm, dm, 1.0, lc.input.data().data(), dm,
                 view(params, t.w_k).data(), dm, 0.0, lc.k.data().data(), dm);
        nn::gemm(false, false, n, dm, dm, 1.0, lc.input.data().data(), dm,
                 view(params, t.w_v).data(), dm, 0.0, lc.v.data().data(), dm);

        lc.sigma_raw = Matrix(n, cfg.heads);
        nn::gemm(false, false, n, cfg.heads, dm, 1.0, lc.input.data().data(), dm,
                 view(params, t.w_sigma).data(), cfg.heads, 0.0, lc.sigma_raw.data().data(),
                 cfg.heads);
        add_row_bias(lc.sigma_raw, view(params, t.b_sigma));
        lc.sigma = lc.sigma_raw;
        for (double& v : lc.sigma.data()) v = nn::softplus(v);

        lc.series.resize(cfg.heads);
        lc.prior.resize(cfg.heads);
        lc.prior_rowsum.resize(cfg.heads);
        lc.attn_concat = Matrix(n, dm);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix qh = head_slice(lc.q, h, dk);
            const Matrix kh = head_slice(lc.k, h, dk);
            const Matrix vh = head_slice(lc.v, h, dk);

            Matrix attn(n, n);
            nn::gemm(false, true, n, n, dk, inv_sqrt_dk, qh.data().data(), dk,
                     kh.data().data(), dk, 0.0, attn.data().data(), n);
            for (std::size_t r = 0; r < n; ++r) nn::softmax_inplace(attn.row(r));
            lc.series[h] = std::move(attn);

            Matrix prior(n, n);
            Vector rowsum(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double s = lc.sigma(i, h);
                const double inv = 1.0 / (2.0 * s * s);
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gap = static_cast<double>(i) - static_cast<double>(j);
                    prior(i, j) = std::exp(-gap * gap * inv);
                    total += prior(i, j);
                }
                rowsum[i] = total;
                for (std::size_t j = 0; j < n; ++j) prior(i, j) /= total;
            }
            lc.prior[h] = std::move(prior);
            lc.prior_rowsum[h] = std::move(rowsum);

            Matrix oh(n, dk);
            nn::gemm(false, false, n, dk, n, 1.0, lc.series[h].data().data(), n,
                     vh.data().data(), dk, 0.0, oh.data().data(), dk);
            head_scatter_add(lc.attn_concat, oh, h, dk);
        }

        lc.attn_out = Matrix(n, dm);
        nn::gemm(false, false, n, dm, dm, 1.0, lc.attn_concat.data().data(), dm,
                 view(params, t.w_o).data(), dm, 0.0, lc.attn_out.data().data(), dm);
        add_row_bias(lc.attn_out, view(params, t.b_o));

        Matrix r1 = lc.input;
        for (std::size_t i = 0; i < r1.data().size(); ++i)
            r1.data()[i] += lc.attn_out.data()[i];
        lc.e1 = Matrix(n, dm);
        nn::layer_norm(r1.data(), view(params, t.ln1_gain), view(params, t.ln1_bias),
                       lc.e1.data(), n, dm, lc.ln1);

        lc.ff_pre = Matrix(n, cfg.d_ff);
        nn::gemm(false, false, n, cfg.d_ff, dm, 1.0, lc.e1.data().data(), dm,
                 view(params, t.ff_w1).data(), cfg.d_ff, 0.0, lc.ff_pre.data().data(),
                 cfg.d_ff);
        add_row_bias(lc.ff_pre, view(params, t.ff_b1));
        lc.ff_act = lc.ff_pre;
        for (double& v : lc.ff_act.data()) v = std::max(v, 0.0);
        lc.ff_out = Matrix(n, dm);
        nn::gemm(false, false, n, dm, cfg.d_ff, 1.0, lc.ff_act.data().data(), cfg.d_ff,
                 view(params, t.ff_w2).data(), dm, 0.0, lc.ff_out.data().data(), dm);
        add_row_bias(lc.ff_out, view(params, t.ff_b2));

        Matrix r2 = lc.e1;
        for (std::size_t i = 0; i < r2.data().size(); ++i)
            r2.data()[i] += lc.ff_out.data()[i];
        lc.e2 = Matrix(n, dm);
        nn::layer_norm(r2.data(), view(params, t.ln2_gain), view(params, t.ln2_bias),
                       lc.e2.data(), n, dm, lc.ln2);
        current = &lc.e2;
    }

    cache.xhat = Matrix(n, m);
    nn::gemm(false, false, n, m, dm, 1.0, current->data().data(), dm,
             view(params, model.out_w).data(), m, 0.0, cache.xhat.data().data(), m);
    add_row_bias(cache.xhat, view(params, model.out_b));

    cache.recon = 0.0;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        const double r = x.data()[i] - cache.xhat.data()[i];
        cache.recon += r * r;
    }
    cache.recon /= static_cast<double>(n * m);
}

}  // namespace

double transformer_batch_objective(const TransformerModel& model, const Vector& params,
                                   const std::vector<Matrix>& windows, MinimaxPhase phase,
                                   const Associations* frozen, Vector* grad,
                                   Associations* captured) {
    const TransformerConfig& cfg = model.config();
    const std::size_t m = model.input_dim();
    const std::size_t dm = cfg.d_model;
    const std::size_t dk = dm / cfg.heads;
    const std::size_t heads = cfg.heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const std::size_t batch = windows.size();
    if (batch == 0) throw PreconditionViolation("transformer_batch_objective: no windows");
    const std::size_t n = windows.front().rows();
    const Matrix pe = sinusoidal_encoding(n, dm);
    const double eps = std::max(cfg.smoothing, 0.0);
    const double smooth_denom = 1.0 + static_cast<double>(n) * eps;
    const double wB = 1.0 / static_cast<double>(batch);
    const double sign = phase == MinimaxPhase::MinimizeDiscrepancy ? -1.0 : 1.0;

    if (grad != nullptr) grad->assign(params.size(), 0.0);

    double total_loss = 0.0;
    WindowCache cache;
    for (std::size_t w = 0; w < batch; ++w) {
        const Matrix& x = windows[w];
        if (x.rows() != n || x.cols() != m)
            throw DimensionMismatch("transformer_batch_objective: window shape mismatch");
        forward_one(model, params, x, pe, cache);

        // Smoothed head-means per layer. The minimize phase freezes the prior
        // side, the maximize phase freezes the series side; a null `frozen`
        // pins the frozen side to this forward pass's own values.
        std::vector<Matrix> p_used(cfg.layers), s_used(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::vector<Matrix>& p_actual =
                (phase == MinimaxPhase::MinimizeDiscrepancy && frozen != nullptr)
                    ? frozen->prior[l]
                    : cache.layers[l].prior;
            const std::vector<Matrix>& s_actual =
                (phase == MinimaxPhase::MaximizeDiscrepancy && frozen != nullptr)
                    ? frozen->series[l]
                    : cache.layers[l].series;
            p_used[l] = smooth_rows(head_mean(p_actual), eps);
            s_used[l] = smooth_rows(head_mean(s_actual), eps);
        }

        double assdis_mean = 0.0;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double u = p_used[l](i, j);
                    const double v = s_used[l](i, j);
                    assdis_mean += u * std::log(u / v) + v * std::log(v / u);
                }
        }
        assdis_mean /= static_cast<double>(cfg.layers) * static_cast<double>(n);

        total_loss += cache.recon + sign * cfg.lambda * assdis_mean;

        if (captured != nullptr && w == batch - 1) {
            captured->prior.clear();
            captured->series.clear();
            for (std::size_t l = 0; l < cfg.layers; ++l) {
                captured->prior.push_back(cache.layers[l].prior);
                captured->series.push_back(cache.layers[l].series);
            }
        }
        if (grad == nullptr) continue;

        // ---- backward ----
        Matrix d_e(n, dm);
        {
            Matrix dxhat(n, m);
            const double coeff = wB * 2.0 / static_cast<double>(n * m);
            for (std::size_t i = 0; i < dxhat.data().size(); ++i)
                dxhat.data()[i] = coeff * (cache.xhat.data()[i] - x.data()[i]);
            nn::gemm(true, false, dm, m, n, 1.0,
                     cache.layers.back().e2.data().data(), dm, dxhat.data().data(), m, 1.0,
                     view(*grad, model.out_w).data(), m);
            accumulate_column_sums(dxhat, view(*grad, model.out_b));
            nn::gemm(false, true, n, dm, m, 1.0, dxhat.data().data(), m,
                     view(params, model.out_w).data(), m, 0.0, d_e.data().data(), dm);
        }

        const double d_assdis_entry =
            wB * sign * cfg.lambda /
            (static_cast<double>(cfg.layers) * static_cast<double>(n));

        for (std::size_t l = cfg.layers; l-- > 0;) {
            LayerCache& lc = cache.layers[l];
            const auto& t = model.layers[l];

            // LN2 backward into the residual branch.
            Matrix d_r2(n, dm);
            nn::layer_norm_backward(view(params, t.ln2_gain), lc.ln2, d_e.data(),
                                    view(*grad, t.ln2_gain), view(*grad, t.ln2_bias),
                                    d_r2.data(), n, dm);
            Matrix d_e1 = d_r2;

            // FFN backward.
            {
                Matrix d_act(n, cfg.d_ff);
                nn::gemm(false, true, n, cfg.d_ff, dm, 1.0, d_r2.data().data(), dm,
                         view(params, t.ff_w2).data(), dm, 0.0, d_act.data().data(),
                         cfg.d_ff);
                nn::gemm(true, false, cfg.d_ff, dm, n, 1.0, lc.ff_act.data().data(),
                         cfg.d_ff, d_r2.data().data(), dm, 1.0,
                         view(*grad, t.ff_w2).data(), dm);
                accumulate_column_sums(d_r2, view(*grad, t.ff_b2));
                for (std::size_t i = 0; i < d_act.data().size(); ++i)
                    if (lc.ff_pre.data()[i] <= 0.0) d_act.data()[i] = 0.0;
                nn::gemm(true, false, dm, cfg.d_ff, n, 1.0, lc.e1.data().data(), dm,
                         d_act.data().data(), cfg.d_ff, 1.0, view(*grad, t.ff_w1).data(),
                         cfg.d_ff);
                accumulate_column_sums(d_act, view(*grad, t.ff_b1));
                nn::gemm(false, true, n, dm, cfg.d_ff, 1.0, d_act.data().data(), cfg.d_ff,
                         view(params, t.ff_w1).data(), cfg.d_ff, 1.0, d_e1.data().data(),
                         dm);
            }

            // LN1 backward; residual splits into layer input and attention.
            Matrix d_r1(n, dm);
            nn::layer_norm_backward(view(params, t.ln1_gain), lc.ln1, d_e1.data(),
                                    view(*grad, t.ln1_gain), view(*grad, t.ln1_bias),
                                    d_r1.data(), n, dm);
            Matrix d_input = d_r1;

            // Output projection backward.
            Matrix d_concat(n, dm);
            nn::gemm(false, true, n, dm, dm, 1.0, d_r1.data().data(), dm,
                     view(params, t.w_o).data(), dm, 0.0, d_concat.data().data(), dm);
            nn::gemm(true, false, dm, dm, n, 1.0, lc.attn_concat.data().data(), dm,
                     d_r1.data().data(), dm, 1.0, view(*grad, t.w_o).data(), dm);
            accumulate_column_sums(d_r1, view(*grad, t.b_o));

            Matrix d_q(n, dm), d_k(n, dm), d_v(n, dm);
            Matrix d_sigma(n, heads);
            for (std::size_t h = 0; h < heads; ++h) {
                const Matrix qh = head_slice(lc.q, h, dk);
                const Matrix kh = head_slice(lc.k, h, dk);
                const Matrix vh = head_slice(lc.v, h, dk);
                const Matrix d_oh = head_slice(d_concat, h, dk);

                Matrix d_s(n, n);
                nn::gemm(false, true, n, n, dk, 1.0, d_oh.data().data(), dk,
                         vh.data().data(), dk, 0.0, d_s.data().data(), n);
                Matrix d_vh(n, dk);
                nn::gemm(true, false, n, dk, n, 1.0, lc.series[h].data().data(), n,
                         d_oh.data().data(), dk, 0.0, d_vh.data().data(), dk);
                head_scatter_add(d_v, d_vh, h, dk);

                if (phase == MinimaxPhase::MinimizeDiscrepancy) {
                    // d assdis / d series, prior side constant.
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double u = p_used[l](i, j);
                            const double v = s_used[l](i, j);
                            const double dv = std::log(v / u) + 1.0 - u / v;
                            d_s(i, j) += d_assdis_entry * dv /
                                         (smooth_denom * static_cast<double>(heads));
                        }
                } else {
                    // d assdis / d prior, series side constant.
                    const Matrix& prior = lc.prior[h];
                    const Vector& rowsum = lc.prior_rowsum[h];
                    for (std::size_t i = 0; i < n; ++i) {
                        double inner = 0.0;
                        Vector dp_row(n);
                        for (std::size_t j = 0; j < n; ++j) {
                            const double u = p_used[l](i, j);
                            const double v = s_used[l](i, j);
                            dp_row[j] = d_assdis_entry * (std::log(u / v) + 1.0 - v / u) /
                                        (smooth_denom * static_cast<double>(heads));
                            inner += dp_row[j] * prior(i, j);
                        }
                        const double s = lc.sigma(i, h);
                        double dsig = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double dg = (dp_row[j] - inner) / rowsum[i];
                            const double gap =
                                static_cast<double>(i) - static_cast<double>(j);
                            const double kernel = prior(i, j) * rowsum[i];
                            dsig += dg * kernel * gap * gap / (s * s * s);
                        }
                        d_sigma(i, h) += dsig;
                    }
                }

                Matrix d_attn(n, n);
                for (std::size_t r = 0; r < n; ++r)
                    nn::softmax_backward(lc.series[h].row(r), d_s.row(r), d_attn.row(r));
                Matrix d_qh(n, dk), d_kh(n, dk);
                nn::gemm(false, false, n, dk, n, inv_sqrt_dk, d_attn.data().data(), n,
                         kh.data().data(), dk, 0.0, d_qh.data().data(), dk);
                nn::gemm(true, false, n, dk, n, inv_sqrt_dk, d_attn.data().data(), n,
                         qh.data().data(), dk, 0.0, d_kh.data().data(), dk);
                head_scatter_add(d_q, d_qh, h, dk);
                head_scatter_add(d_k, d_kh, h, dk);
            }

            if (phase == MinimaxPhase::MaximizeDiscrepancy) {
                // Through softplus into the sigma head.
                Matrix d_sigma_raw = d_sigma;
                for (std::size_t i = 0; i < d_sigma_raw.data().size(); ++i)
                    d_sigma_raw.data()[i] *= nn::sigmoid(lc.sigma_raw.data()[i]);
                nn::gemm(true, false, dm, heads, n, 1.0, lc.input.data().data(), dm,
                         d_sigma_raw.data().data(), heads, 1.0,
                         view(*grad, t.w_sigma).data(), heads);
                accumulate_column_sums(d_sigma_raw, view(*grad, t.b_sigma));
                nn::gemm(false, true, n, dm, heads, 1.0, d_sigma_raw.data().data(), heads,
                         view(params, t.w_sigma).data(), heads, 1.0, d_input.data().data(),
                         dm);
            }

            // QKV projections.
            nn::gemm(true, false, dm, dm, n, 1.0, lc.input.data().data(), dm,
                     d_q.data().data(), dm, 1.0, view(*grad, t.w_q).data(), dm);
            nn::gemm(true, false, dm, dm, n, 1.0, lc.input.data().data(), dm,
                     d_k.data().data(), dm, 1.0, view(*grad, t.w_k).data(), dm);
            nn::gemm(true, false, dm, dm, n, 1.0, lc.input.data().data(), dm,
                     d_v.data().data(), dm, 1.0, view(*grad, t.w_v).data(), dm);
            nn::gemm(false, true, n, dm, dm, 1.0, d_q.data().data(), dm,
                     view(params, t.w_q).data(), dm, 1.0, d_input.data().data(), dm);
            nn::gemm(false, true, n, dm, dm, 1.0, d_k.data().data(), dm,
                     view(params, t.w_k).data(), dm, 1.0, d_input.data().data(), dm);
            nn::gemm(false, true, n, dm, dm, 1.0, d_v.data().data(), dm,
                     view(params, t.w_v).data(), dm, 1.0, d_input.data().data(), dm);

            d_e = std::move(d_input);
        }

        // Embedding backward (positional encoding is constant).
        nn::gemm(true, false, m, dm, n, 1.0, x.data().data(), m, d_e.data().data(), dm, 1.0,
                 view(*grad, model.emb_w).data(), dm);
        accumulate_column_sums(d_e, view(*grad, model.emb_b));
    }

    return total_loss * wB;
}

TransformerScoreParts transformer_forward_window(const TransformerModel& model,
                                                 const Matrix& window) {
    const TransformerConfig& cfg = model.config();
    if (window.cols() != model.input_dim())
        throw DimensionMismatch("transformer_forward_window: dimension mismatch");
    const Matrix pe = sinusoidal_encoding(window.rows(), cfg.d_model);
    WindowCache cache;
    forward_one(model, model.params, window, pe, cache);

    std::vector<std::vector<Matrix>> p_layers, s_layers;
    for (const auto& lc : cache.layers) {
        p_layers.push_back(lc.prior);
        s_layers.push_back(lc.series);
    }

    TransformerScoreParts parts;
    parts.assdis = association_discrepancy(p_layers, s_layers, cfg.smoothing);
    parts.reconstruction = cache.xhat;
    parts.criterion_series = criterion(parts.assdis, window, cache.xhat);
    return parts;
}

TransformerModel train_minimax(const TimeSeriesDataset& ds, const TransformerConfig& cfg) {
    const std::size_t n = cfg.window;
    if (ds.train.rows() < n)
        throw SeriesTooShort("train_minimax: train split shorter than one window");
    if (!(cfg.lambda >= 0.0))
        throw PreconditionViolation("train_minimax: lambda must be non-negative");

    const auto windows = make_windows(ds.train, {n, n});
    TransformerModel model(ds.train.cols(), cfg);
    nn::SgdMomentum optimizer;
    Vector g1, g2;

    const std::size_t chunk = std::max<std::size_t>(1, cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_recon = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
            const std::size_t count = std::min(chunk, windows.size() - begin);
            std::vector<Matrix> batch;
            batch.reserve(count);
            for (std::size_t i = 0; i < count; ++i) batch.push_back(windows[begin + i].data);

            const double l1 = transformer_batch_objective(
                model, model.params, batch, MinimaxPhase::MinimizeDiscrepancy, nullptr, &g1);
            const double l2 = transformer_batch_objective(
                model, model.params, batch, MinimaxPhase::MaximizeDiscrepancy, nullptr, &g2);
            if (!std::isfinite(l1) || !std::isfinite(l2))
                throw TrainingDiverged("train_minimax: non-finite loss at epoch " +
                                       std::to_string(epoch + 1));
            // (L1 + L2)/2 = reconstruction MSE; the discrepancy terms cancel in
            // value and realize the two stop-gradient phases in the gradient.
            for (std::size_t i = 0; i < g1.size(); ++i) g1[i] = 0.5 * (g1[i] + g2[i]);
            optimizer.step(model.params, g1, cfg.learning_rate, cfg.momentum, cfg.clip_norm);
            epoch_recon += 0.5 * (l1 + l2) * static_cast<double>(count);
            seen += count;
        }
        model.loss_trace.push_back(epoch_recon / static_cast<double>(seen));
    }
    return model;
}

AnomalyScoreSeries score_series(const TransformerModel& model, const TimeSeriesDataset& ds) {
    const TransformerConfig& cfg = model.config();
    const std::size_t m = model.input_dim();
    if (ds.test.cols() != m)
        throw DimensionMismatch("score_series: test has " + std::to_string(ds.test.cols()) +
                                " dims, model expects " + std::to_string(m));
    const std::size_t total = ds.test.rows();
    if (total == 0) throw EmptyInput("score_series: empty test split");
    const std::size_t n = cfg.window;

    AnomalyScoreSeries out;
    out.detector = "transformer";
    out.config_fingerprint = "transformer:N=" + std::to_string(n) +
                             ":layers=" + std::to_string(cfg.layers) +
                             ":seed=" + std::to_string(cfg.seed);
    out.scores.reserve(total);

    const std::size_t full = total / n;
    for (std::size_t w = 0; w < full; ++w) {
        const Matrix win = rows_slice(ds.test, w * n, n);
        const auto parts = transformer_forward_window(model, win);
        out.scores.insert(out.scores.end(), parts.criterion_series.begin(),
                          parts.criterion_series.end());
    }
    const std::size_t rest = total - full * n;
    if (rest > 0) {
        // Left-pad by repeating the partial window's first row, then discard
        // the pad positions.
        Matrix win(n, m);
        const std::size_t start = full * n;
        for (std::size_t r = 0; r < n - rest; ++r)
            std::copy(ds.test.row(start).begin(), ds.test.row(start).end(), win.row(r).begin());
        for (std::size_t r = 0; r < rest; ++r)
            std::copy(ds.test.row(start + r).begin(), ds.test.row(start + r).end(),
                      win.row(n - rest + r).begin());
        const auto parts = transformer_forward_window(model, win);
        out.scores.insert(out.scores.end(), parts.criterion_series.begin() + (n - rest),
                          parts.criterion_series.end());
    }
    return out;
}

void save_transformer(const TransformerModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const TransformerConfig& c = model.config();
    nlohmann::ordered_json j;
    j["detector"] = "transformer";
    j["input_dim"] = model.input_dim();
    j["window"] = c.window;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["d_model"] = c.d_model;
    j["d_ff"] = c.d_ff;
    j["lambda"] = c.lambda;
    j["smoothing"] = c.smoothing;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    j["anomaly_ratio"] = c.anomaly_ratio;
    j["param_count"] = model.params.size();
    std::ofstream meta(dir / "model.json");
    meta << j.dump(2) << '\n';

    std::string bytes;
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

TransformerModel load_transformer(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "model.json");
    if (!meta) throw ParseError("cannot open " + (dir / "model.json").string());
    nlohmann::json j;
    meta >> j;

    TransformerConfig c;
    c.window = j.at("window").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.smoothing = j.at("smoothing").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.anomaly_ratio = j.at("anomaly_ratio").get<double>();

    TransformerModel model(j.at("input_dim").get<std::size_t>(), c);

    std::ifstream raw(dir / "model.blob", std::ios::binary);
    if (!raw) throw ParseError("cannot open " + (dir / "model.blob").string());
    std::string bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
    const auto read_at = [&bytes](std::size_t idx) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b)
            bits = (bits << 8) |
                   static_cast<unsigned char>(bytes[8 * idx + static_cast<std::size_t>(b)]);
        return std::bit_cast<double>(bits);
    };
    const std::size_t trace_len = static_cast<std::size_t>(read_at(0));
    if (bytes.size() != 8 * (1 + trace_len + model.params.size()))
        throw ParseError("transformer model blob has unexpected size");
    model.loss_trace.resize(trace_len);
    for (std::size_t i = 0; i < trace_len; ++i) model.loss_trace[i] = read_at(1 + i);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        model.params[i] = read_at(1 + trace_len + i);
    return model;
}

}  // namespace drtsad
