#include <algorithm>
#include <cmath>
#include <numeric>

#include "drtsad/dimreduce.hpp"
#include "drtsad/errors.hpp"

namespace drtsad {

namespace {

struct NeighborList {
    std::vector<std::vector<std::size_t>> index;  // per point, k nearest (self excluded)
    std::vector<Vector> distance;                 // Euclidean, same shape
};

NeighborList exact_knn(const Matrix& points, std::size_t k) {
    const std::size_t n = points.rows();
    NeighborList out;
    out.index.resize(n);
    out.distance.resize(n);
    std::vector<std::pair<double, std::size_t>> scratch(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            scratch[j] = {squared_distance(points.row(i), points.row(j)), j};
        scratch[i].first = std::numeric_limits<double>::infinity();  // exclude self
        std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                          scratch.end());
        out.index[i].resize(k);
        out.distance[i].resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            out.index[i][j] = scratch[j].second;
            out.distance[i][j] = std::sqrt(scratch[j].first);
        }
    }
    return out;
}

// Binary search for the membership bandwidth: sum_j exp(-max(0, d_j - rho)/sigma)
// should equal log2(k). rho is the nearest positive distance.
std::pair<double, double> solve_membership_scale(const Vector& dists) {
    const std::size_t k = dists.size();
    double rho = 0.0;
    for (double d : dists)
        if (d > 0.0) {
            rho = d;
            break;
        }
    const double target = std::log2(static_cast<double>(k));

    const auto member_sum = [&](double sigma) {
        double s = 0.0;
        for (double d : dists) s += std::exp(-std::max(0.0, d - rho) / sigma);
        return s;
    };

    double lo = 1e-12, hi = 1.0;
    for (int i = 0; i < 64 && member_sum(hi) < target; ++i) hi *= 2.0;
    for (int i = 0; i < 64; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (member_sum(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return {rho, std::max(0.5 * (lo + hi), 1e-8)};
}

double curve_phi(double sq_dist, double a, double b) {
    return 1.0 / (1.0 + a * std::pow(sq_dist, b));
}

// Cross-entropy of the positive-edge sample against the embedding curve.
double positive_edge_objective(const std::vector<UmapEdge>& edges, const Matrix& y, double a,
                               double b) {
    double total = 0.0;
    for (const auto& e : edges) {
        const double d2 = squared_distance(y.row(e.i), y.row(e.j));
        const double phi = std::clamp(curve_phi(d2, a, b), 1e-12, 1.0 - 1e-12);
        total += -e.weight * std::log(phi) - (1.0 - e.weight) * std::log(1.0 - phi);
    }
    return total;
}

}  // namespace

std::pair<double, double> umap_fit_curve(double min_dist) {
    // Sample the target curve on [0, 3]: 1 below min_dist, exp falloff beyond.
    constexpr std::size_t kSamples = 300;
    Vector xs(kSamples), ys(kSamples);
    for (std::size_t i = 0; i < kSamples; ++i) {
        const double x = 3.0 * static_cast<double>(i + 1) / static_cast<double>(kSamples);
        xs[i] = x;
        ys[i] = x <= min_dist ? 1.0 : std::exp(-(x - min_dist));
    }
    const auto sse = [&](double a, double b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < kSamples; ++i) {
            const double g = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b));
            const double r = g - ys[i];
            acc += r * r;
        }
        return acc;
    };

    double best_a = 1.0, best_b = 1.0, best = sse(1.0, 1.0);
    for (int ia = 0; ia < 80; ++ia) {
        const double a = 0.25 * std::pow(24.0, ia / 79.0);
        for (int ib = 0; ib < 80; ++ib) {
            const double b = 0.4 + 2.0 * ib / 79.0;
            const double v = sse(a, b);
            if (v < best) {
                best = v;
                best_a = a;
                best_b = b;
            }
        }
    }
    // Shrinking local refinement around the grid optimum.
    double step_a = best_a * 0.2, step_b = 0.05;
    for (int iter = 0; iter < 40; ++iter) {
        bool improved = false;
        for (int da = -1; da <= 1; ++da) {
            for (int db = -1; db <= 1; ++db) {
                const double a = best_a + da * step_a;
                const double b = best_b + db * step_b;
                if (a <= 0.0 || b <= 0.0) continue;
                const double v = sse(a, b);
                if (v < best) {
                    best = v;
                    best_a = a;
                    best_b = b;
                    improved = true;
                }
            }
        }
        if (!improved) {
            step_a *= 0.5;
            step_b *= 0.5;
        }
    }
    return {best_a, best_b};
}

UmapGraph umap_fuzzy_graph(const Matrix& points, std::size_t n_neighbors) {
    const std::size_t n = points.rows();
    const NeighborList knn = exact_knn(points, n_neighbors);

    UmapGraph graph;
    graph.rho.resize(n);
    graph.sigma.resize(n);

    // Directed memberships, then fuzzy union v + v' - v*v'.
    std::vector<std::vector<std::pair<std::size_t, double>>> directed(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [rho, sigma] = solve_membership_scale(knn.distance[i]);
        graph.rho[i] = rho;
        graph.sigma[i] = sigma;
        directed[i].reserve(n_neighbors);
        for (std::size_t j = 0; j < n_neighbors; ++j) {
            const double d = knn.distance[i][j];
            const double v = std::exp(-std::max(0.0, d - rho) / sigma);
            directed[i].push_back({knn.index[i][j], v});
        }
    }

    const auto directed_weight = [&](std::size_t i, std::size_t j) {
        for (const auto& [idx, v] : directed[i])
            if (idx == j) return v;
        return 0.0;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [j, vij] : directed[i]) {
            if (j < i) continue;  // handle each unordered pair once
            const double vji = directed_weight(j, i);
            const double w = vij + vji - vij * vji;
            if (w > 0.0) graph.edges.push_back({i, j, w});
        }
    }
    return graph;
}

FittedReducer fit_umap(const Matrix& train, const ReducerSpec& spec) {
    const std::size_t n_rows = train.rows();
    const std::size_t m = spec.target_dim;
    const UmapParams& p = spec.umap;
    if (p.n_neighbors < 2)
        throw PreconditionViolation("fit_umap: n_neighbors must be >= 2");
    if (n_rows < p.n_neighbors + 1)
        throw InsufficientSamples("fit_umap: need at least n_neighbors + 1 rows, got " +
                                  std::to_string(n_rows));

    UmapGraph graph = umap_fuzzy_graph(train, p.n_neighbors);
    const auto [a, b] = umap_fit_curve(p.min_dist);

    // PCA initialization scaled into [-10, 10].
    const FittedReducer pca = fit_pca(train, std::min(m, train.cols()));
    Matrix y = transform_linear(pca, train);
    if (y.cols() < m) {  // degenerate: pad missing coordinates with zeros
        Matrix padded(n_rows, m);
        for (std::size_t i = 0; i < n_rows; ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) padded(i, j) = y(i, j);
        y = std::move(padded);
    }
    const double widest = max_abs(y);
    if (widest > 0.0)
        for (double& v : y.data()) v *= 10.0 / widest;

    FittedReducer fr;
    fr.spec = spec;
    fr.spec.kind = ReducerKind::UMAP;
    fr.input_dim = train.cols();
    fr.objective_trace.push_back(positive_edge_objective(graph.edges, y, a, b));

    if (p.epochs > 0) {
        const std::size_t n_edges = graph.edges.size();
        double max_w = 0.0;
        for (const auto& e : graph.edges) max_w = std::max(max_w, e.weight);

        Vector eps_sample(n_edges), next_sample(n_edges);
        Vector eps_negative(n_edges), next_negative(n_edges);
        for (std::size_t e = 0; e < n_edges; ++e) {
            eps_sample[e] = max_w / graph.edges[e].weight;
            next_sample[e] = eps_sample[e];
            eps_negative[e] = eps_sample[e] / static_cast<double>(std::max<std::size_t>(
                                                 p.negative_samples, 1));
            next_negative[e] = eps_negative[e];
        }

        RandomSource rng = RandomSource(spec.seed).fork(11);
        const double epochs_d = static_cast<double>(p.epochs);
        const std::size_t record_every = std::max<std::size_t>(1, p.epochs / 20);

        for (std::size_t epoch = 1; epoch <= p.epochs; ++epoch) {
            const double alpha =
                p.learning_rate * (1.0 - static_cast<double>(epoch - 1) / epochs_d);
            for (std::size_t e = 0; e < n_edges; ++e) {
                if (next_sample[e] > static_cast<double>(epoch)) continue;
                const std::size_t i = graph.edges[e].i;
                const std::size_t j = graph.edges[e].j;
                auto yi = y.row(i);
                auto yj = y.row(j);

                const double d2 = squared_distance(yi, yj);
                if (d2 > 0.0) {
                    const double coeff =
                        (-2.0 * a * b * std::pow(d2, b - 1.0)) / (1.0 + a * std::pow(d2, b));
                    for (std::size_t dd = 0; dd < m; ++dd) {
                        const double g = std::clamp(coeff * (yi[dd] - yj[dd]), -4.0, 4.0);
                        yi[dd] += alpha * g;
                        yj[dd] -= alpha * g;
                    }
                }
                next_sample[e] += eps_sample[e];

                const std::size_t n_neg = static_cast<std::size_t>(std::max(
                    0.0, (static_cast<double>(epoch) - next_negative[e]) / eps_negative[e]));
                for (std::size_t s = 0; s < n_neg; ++s) {
                    const std::size_t other = rng.next_below(n_rows);
                    if (other == i) continue;
                    const double dn2 = squared_distance(yi, y.row(other));
                    if (dn2 > 0.0) {
                        const double coeff =
                            2.0 * b / ((0.001 + dn2) * (1.0 + a * std::pow(dn2, b)));
                        for (std::size_t dd = 0; dd < m; ++dd)
                            yi[dd] += alpha *
                                      std::clamp(coeff * (yi[dd] - y(other, dd)), -4.0, 4.0);
                    } else {
                        for (std::size_t dd = 0; dd < m; ++dd) yi[dd] += alpha * 4.0;
                    }
                }
                next_negative[e] += static_cast<double>(n_neg) * eps_negative[e];
            }
            if (epoch % record_every == 0 || epoch == p.epochs)
                fr.objective_trace.push_back(positive_edge_objective(graph.edges, y, a, b));
        }
    }

    UmapPayload payload;
    payload.train_points = train;
    payload.embedding = std::move(y);
    payload.curve_a = a;
    payload.curve_b = b;
    payload.rho = std::move(graph.rho);
    payload.sigma = std::move(graph.sigma);
    fr.payload = std::move(payload);
    return fr;
}

Matrix transform_umap(const FittedReducer& fr, const Matrix& data) {
    const auto* payload = std::get_if<UmapPayload>(&fr.payload);
    if (payload == nullptr)
        throw PreconditionViolation("transform_umap: reducer is not a fitted UMAP");
    if (data.cols() != fr.input_dim)
        throw DimensionMismatch("transform_umap: data has " + std::to_string(data.cols()) +
                                " columns, reducer expects " + std::to_string(fr.input_dim));

    const Matrix& train = payload->train_points;
    const Matrix& emb = payload->embedding;
    const std::size_t n_train = train.rows();
    const std::size_t m = emb.cols();
    const std::size_t k = std::min(fr.spec.umap.n_neighbors, n_train);
    const double a = payload->curve_a;
    const double b = payload->curve_b;
    const std::size_t refine_steps = fr.spec.umap.epochs / 4;

    Matrix out(data.rows(), m);
    std::vector<std::pair<double, std::size_t>> scratch(n_train);

    for (std::size_t q = 0; q < data.rows(); ++q) {
        for (std::size_t j = 0; j < n_train; ++j)
            scratch[j] = {squared_distance(data.row(q), train.row(j)), j};
        std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                          scratch.end());

        Vector dists(k);
        std::vector<std::size_t> neighbors(k);
        for (std::size_t j = 0; j < k; ++j) {
            dists[j] = std::sqrt(scratch[j].first);
            neighbors[j] = scratch[j].second;
        }

        auto yq = out.row(q);
        if (dists[0] <= 1e-12) {
            // Exact training point: snap to its embedding.
            std::copy(emb.row(neighbors[0]).begin(), emb.row(neighbors[0]).end(), yq.begin());
        } else {
            const auto [rho, sigma] = solve_membership_scale(dists);
            double wsum = 0.0;
            Vector weights(k);
            for (std::size_t j = 0; j < k; ++j) {
                weights[j] = std::exp(-std::max(0.0, dists[j] - rho) / sigma);
                wsum += weights[j];
            }
            for (std::size_t dd = 0; dd < m; ++dd) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += weights[j] * emb(neighbors[j], dd);
                yq[dd] = acc / wsum;
            }
        }

        if (refine_steps == 0) continue;
        // Refinement against the frozen training embedding. Every row uses an
        // identically seeded stream so duplicate rows embed identically.
        RandomSource rng = RandomSource(fr.spec.seed).fork(13);
        Vector weights(k, 1.0);
        {
            const auto [rho, sigma] = solve_membership_scale(dists);
            double wmax = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                weights[j] = std::exp(-std::max(0.0, dists[j] - rho) / sigma);
                wmax = std::max(wmax, weights[j]);
            }
            if (wmax > 0.0)
                for (double& w : weights) w /= wmax;
        }
        for (std::size_t s = 0; s < refine_steps; ++s) {
            const double alpha = 0.25 * fr.spec.umap.learning_rate *
                                 (1.0 - static_cast<double>(s) /
                                            static_cast<double>(refine_steps));
            for (std::size_t j = 0; j < k; ++j) {
                const double d2 = squared_distance(yq, emb.row(neighbors[j]));
                if (d2 <= 0.0) continue;
                const double coeff =
                    (-2.0 * a * b * std::pow(d2, b - 1.0)) / (1.0 + a * std::pow(d2, b));
                for (std::size_t dd = 0; dd < m; ++dd)
                    yq[dd] += alpha * weights[j] *
                              std::clamp(coeff * (yq[dd] - emb(neighbors[j], dd)), -4.0, 4.0);
            }
            for (std::size_t neg = 0; neg < fr.spec.umap.negative_samples; ++neg) {
                const std::size_t other = rng.next_below(n_train);
                const double d2 = squared_distance(yq, emb.row(other));
                if (d2 <= 0.0) continue;
                const double coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * std::pow(d2, b)));
                for (std::size_t dd = 0; dd < m; ++dd)
                    yq[dd] += alpha * std::clamp(coeff * (yq[dd] - emb(other, dd)), -4.0, 4.0);
            }
        }
    }
    return out;
}

}  // namespace drtsad
