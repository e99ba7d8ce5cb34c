#include "drtsad/dimreduce.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "drtsad/errors.hpp"
#include "drtsad/numerics.hpp"

namespace drtsad {

const char* reducer_kind_name(ReducerKind k) {
    switch (k) {
        case ReducerKind::PCA: return "pca";
        case ReducerKind::RandomProjection: return "random_projection";
        case ReducerKind::UMAP: return "umap";
        case ReducerKind::TSNE: return "tsne";
    }
    return "unknown";
}

ReducerKind reducer_kind_from_name(const std::string& name) {
    if (name == "pca") return ReducerKind::PCA;
    if (name == "random_projection" || name == "rp" || name == "rand_proj")
        return ReducerKind::RandomProjection;
    if (name == "umap") return ReducerKind::UMAP;
    if (name == "tsne" || name == "t-sne") return ReducerKind::TSNE;
    throw ParseError("unknown reducer kind: " + name);
}

FittedReducer fit_pca(const Matrix& train, std::size_t m) {
    const std::size_t n = train.cols();
    if (m < 1 || m > n)
        throw PreconditionViolation("fit_pca: need 1 <= m <= n");
    const Vector mean = column_mean(train);
    const Matrix cov = covariance_matrix(train, mean);
    const EigenDecomposition eig = symmetric_eigendecomposition(cov);

    PcaPayload payload;
    payload.mean = mean;
    payload.eigenvalues = eig.eigenvalues;
    payload.components = Matrix(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) payload.components(i, j) = eig.eigenvectors(i, j);

    FittedReducer fr;
    fr.spec.kind = ReducerKind::PCA;
    fr.spec.target_dim = m;
    fr.input_dim = n;
    fr.payload = std::move(payload);
    return fr;
}

FittedReducer fit_random_projection(std::size_t n, std::size_t m, RandomSource& rng) {
    if (m < 1 || m >= n)
        throw PreconditionViolation("fit_random_projection: need 1 <= m < n");
    RpPayload payload;
    payload.projection = Matrix(n, m);
    const double sd = 1.0 / std::sqrt(static_cast<double>(m));
    rng.fill_normal(payload.projection, 0.0, sd);

    FittedReducer fr;
    fr.spec.kind = ReducerKind::RandomProjection;
    fr.spec.target_dim = m;
    fr.spec.seed = rng.seed();
    fr.input_dim = n;
    fr.payload = std::move(payload);
    return fr;
}

Matrix transform_linear(const FittedReducer& fr, const Matrix& data) {
    if (data.cols() != fr.input_dim)
        throw DimensionMismatch("transform_linear: data has " + std::to_string(data.cols()) +
                                " columns, reducer expects " + std::to_string(fr.input_dim));
    if (const auto* pca = std::get_if<PcaPayload>(&fr.payload)) {
        Matrix centered = data;
        for (std::size_t i = 0; i < centered.rows(); ++i)
            for (std::size_t j = 0; j < centered.cols(); ++j)
                centered(i, j) -= pca->mean[j];
        return matmul(centered, pca->components);
    }
    if (const auto* rp = std::get_if<RpPayload>(&fr.payload))
        return matmul(data, rp->projection);
    throw PreconditionViolation("transform_linear: reducer is not PCA or random projection");
}

namespace {

std::vector<std::size_t> seeded_subsample(std::size_t total, std::size_t keep,
                                          RandomSource rng) {
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + rng.next_below(total - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
    return out;
}

std::size_t nearest_row(const Matrix& pool, std::span<const double> query) {
    std::size_t best = 0;
    double best_d = squared_distance(pool.row(0), query);
    for (std::size_t i = 1; i < pool.rows(); ++i) {
        const double d = squared_distance(pool.row(i), query);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace

TimeSeriesDataset reduce_dataset(const TimeSeriesDataset& ds, const ReducerSpec& spec) {
    const std::size_t n = ds.manifest.n_dims;
    const std::size_t m = spec.target_dim;
    if (!(m >= 1 && m < n))
        throw PreconditionViolation("reduce_dataset: need 1 <= m < n, got m=" +
                                    std::to_string(m) + " n=" + std::to_string(n));
    if (spec.kind == ReducerKind::TSNE && m > 3)
        throw PreconditionViolation("reduce_dataset: t-SNE supports at most 3 dimensions");

    TimeSeriesDataset out;
    out.manifest = ds.manifest;
    out.manifest.n_dims = m;
    out.labels = ds.labels;

    switch (spec.kind) {
        case ReducerKind::PCA:
        case ReducerKind::RandomProjection: {
            const Matrix& fit_data =
                spec.fit_on == FitOn::Joint ? vstack(ds.train, ds.test) : ds.train;
            FittedReducer fr;
            if (spec.kind == ReducerKind::PCA) {
                fr = fit_pca(fit_data, m);
            } else {
                RandomSource rng(spec.seed);
                fr = fit_random_projection(n, m, rng);
            }
            out.train = transform_linear(fr, ds.train);
            out.test = transform_linear(fr, ds.test);
            break;
        }
        case ReducerKind::UMAP: {
            Matrix fit_data = spec.fit_on == FitOn::Joint ? vstack(ds.train, ds.test) : ds.train;
            bool subsampled = false;
            if (fit_data.rows() > spec.sample_cap) {
                const auto idx = seeded_subsample(fit_data.rows(), spec.sample_cap,
                                                  RandomSource(spec.seed).fork(7));
                fit_data = gather_rows(fit_data, idx);
                subsampled = true;
            }
            const FittedReducer fr = fit_umap(fit_data, spec);
            const auto& payload = std::get<UmapPayload>(fr.payload);
            if (!subsampled && spec.fit_on == FitOn::Train) {
                out.train = payload.embedding;
            } else if (!subsampled && spec.fit_on == FitOn::Joint) {
                out.train = rows_slice(payload.embedding, 0, ds.train.rows());
            } else {
                out.train = transform_umap(fr, ds.train);
            }
            if (!subsampled && spec.fit_on == FitOn::Joint)
                out.test = rows_slice(payload.embedding, ds.train.rows(), ds.test.rows());
            else
                out.test = transform_umap(fr, ds.test);
            break;
        }
        case ReducerKind::TSNE: {
            const std::size_t joint_rows = ds.train.rows() + ds.test.rows();
            if (joint_rows <= spec.sample_cap) {
                const FittedReducer fr = fit_tsne_joint(ds.train, ds.test, spec);
                const auto& payload = std::get<TsnePayload>(fr.payload);
                out.train = rows_slice(payload.embedding, 0, ds.train.rows());
                out.test = rows_slice(payload.embedding, ds.train.rows(), ds.test.rows());
            } else {
                if (ds.test.rows() >= spec.sample_cap)
                    throw TooLargeForExact("reduce_dataset: test split alone exceeds the exact "
                                           "t-SNE row cap");
                // Joint fit on a seeded train subsample plus the full test split;
                // left-out train rows take their nearest sampled row's embedding.
                const std::size_t keep = spec.sample_cap - ds.test.rows();
                const auto idx = seeded_subsample(ds.train.rows(), keep,
                                                  RandomSource(spec.seed).fork(7));
                const Matrix train_sample = gather_rows(ds.train, idx);
                const FittedReducer fr = fit_tsne_joint(train_sample, ds.test, spec);
                const auto& payload = std::get<TsnePayload>(fr.payload);

                out.train = Matrix(ds.train.rows(), m);
                std::vector<bool> sampled(ds.train.rows(), false);
                for (std::size_t r = 0; r < idx.size(); ++r) {
                    sampled[idx[r]] = true;
                    std::copy(payload.embedding.row(r).begin(), payload.embedding.row(r).end(),
                              out.train.row(idx[r]).begin());
                }
                for (std::size_t r = 0; r < ds.train.rows(); ++r) {
                    if (sampled[r]) continue;
                    const std::size_t nn = nearest_row(train_sample, ds.train.row(r));
                    std::copy(payload.embedding.row(nn).begin(), payload.embedding.row(nn).end(),
                              out.train.row(r).begin());
                }
                out.test = rows_slice(payload.embedding, train_sample.rows(), ds.test.rows());
            }
            break;
        }
    }
    return out;
}

// --- serialization: reducer.json + raw little-endian f64 blob ---

namespace {

void append_le_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double read_le_f64(const std::string& in, std::size_t offset) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b)
        bits = (bits << 8) | static_cast<unsigned char>(in[offset + static_cast<std::size_t>(b)]);
    return std::bit_cast<double>(bits);
}

struct BlobWriter {
    std::string bytes;
    nlohmann::ordered_json arrays = nlohmann::ordered_json::array();

    void add(const std::string& name, const double* data, std::size_t rows, std::size_t cols) {
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["rows"] = rows;
        entry["cols"] = cols;
        entry["offset"] = bytes.size();
        arrays.push_back(entry);
        for (std::size_t i = 0; i < rows * cols; ++i) append_le_f64(bytes, data[i]);
    }
    void add(const std::string& name, const Matrix& m) { add(name, m.data().data(), m.rows(), m.cols()); }
    void add(const std::string& name, const Vector& v) { add(name, v.data(), v.size(), 1); }
};

struct BlobReader {
    std::string bytes;
    nlohmann::json arrays;

    nlohmann::json find(const std::string& name) const {
        for (const auto& e : arrays)
            if (e.at("name") == name) return e;
        throw ParseError("reducer blob: missing array " + name);
    }
    Matrix matrix(const std::string& name) const {
        const auto e = find(name);
        Matrix m(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>());
        const std::size_t off = e.at("offset").get<std::size_t>();
        for (std::size_t i = 0; i < m.data().size(); ++i)
            m.data()[i] = read_le_f64(bytes, off + 8 * i);
        return m;
    }
    Vector vector(const std::string& name) const {
        const Matrix m = matrix(name);
        return m.data();
    }
};

}  // namespace

void save_reducer(const FittedReducer& fr, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j;
    j["kind"] = reducer_kind_name(fr.spec.kind);
    j["input_dim"] = fr.input_dim;
    j["target_dim"] = fr.spec.target_dim;
    j["seed"] = fr.spec.seed;
    j["trace_post_start"] = fr.trace_post_start;

    BlobWriter blob;
    blob.add("objective_trace", fr.objective_trace);
    if (const auto* p = std::get_if<PcaPayload>(&fr.payload)) {
        blob.add("mean", p->mean);
        blob.add("components", p->components);
        blob.add("eigenvalues", p->eigenvalues);
    } else if (const auto* p = std::get_if<RpPayload>(&fr.payload)) {
        blob.add("projection", p->projection);
    } else if (const auto* p = std::get_if<UmapPayload>(&fr.payload)) {
        j["curve_a"] = p->curve_a;
        j["curve_b"] = p->curve_b;
        j["n_neighbors"] = fr.spec.umap.n_neighbors;
        j["epochs"] = fr.spec.umap.epochs;
        blob.add("train_points", p->train_points);
        blob.add("embedding", p->embedding);
        blob.add("rho", p->rho);
        blob.add("sigma", p->sigma);
    } else if (const auto* p = std::get_if<TsnePayload>(&fr.payload)) {
        j["train_rows"] = p->train_rows;
        j["test_rows"] = p->test_rows;
        blob.add("embedding", p->embedding);
        blob.add("beta", p->beta);
    }
    j["arrays"] = blob.arrays;

    std::ofstream meta(dir / "reducer.json");
    meta << j.dump(2) << '\n';
    std::ofstream raw(dir / "reducer.blob", std::ios::binary);
    raw.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
}

FittedReducer load_reducer(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "reducer.json");
    if (!meta) throw ParseError("cannot open " + (dir / "reducer.json").string());
    nlohmann::json j;
    meta >> j;

    BlobReader blob;
    blob.arrays = j.at("arrays");
    std::ifstream raw(dir / "reducer.blob", std::ios::binary);
    if (!raw) throw ParseError("cannot open " + (dir / "reducer.blob").string());
    blob.bytes.assign(std::istreambuf_iterator<char>(raw), std::istreambuf_iterator<char>());

    FittedReducer fr;
    fr.spec.kind = reducer_kind_from_name(j.at("kind").get<std::string>());
    fr.spec.target_dim = j.at("target_dim").get<std::size_t>();
    fr.spec.seed = j.at("seed").get<std::uint64_t>();
    fr.input_dim = j.at("input_dim").get<std::size_t>();
    fr.trace_post_start = j.value("trace_post_start", std::size_t{0});
    fr.objective_trace = blob.vector("objective_trace");

    switch (fr.spec.kind) {
        case ReducerKind::PCA: {
            PcaPayload p;
            p.mean = blob.vector("mean");
            p.components = blob.matrix("components");
            p.eigenvalues = blob.vector("eigenvalues");
            fr.payload = std::move(p);
            break;
        }
        case ReducerKind::RandomProjection: {
            RpPayload p;
            p.projection = blob.matrix("projection");
            fr.payload = std::move(p);
            break;
        }
        case ReducerKind::UMAP: {
            UmapPayload p;
            p.curve_a = j.at("curve_a").get<double>();
            p.curve_b = j.at("curve_b").get<double>();
            p.train_points = blob.matrix("train_points");
            p.embedding = blob.matrix("embedding");
            p.rho = blob.vector("rho");
            p.sigma = blob.vector("sigma");
            fr.spec.umap.n_neighbors = j.value("n_neighbors", std::size_t{15});
            fr.spec.umap.epochs = j.value("epochs", std::size_t{200});
            fr.payload = std::move(p);
            break;
        }
        case ReducerKind::TSNE: {
            TsnePayload p;
            p.train_rows = j.at("train_rows").get<std::size_t>();
            p.test_rows = j.at("test_rows").get<std::size_t>();
            p.embedding = blob.matrix("embedding");
            p.beta = blob.vector("beta");
            fr.payload = std::move(p);
            break;
        }
    }
    return fr;
}

}  // namespace drtsad
