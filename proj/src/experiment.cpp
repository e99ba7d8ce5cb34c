#include "drtsad/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "drtsad/errors.hpp"

namespace drtsad {

namespace {

double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

class StopWatch {
public:
    StopWatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        const auto now = std::chrono::steady_clock::now();
        return round_ms(std::chrono::duration<double>(now - start_).count());
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::uint64_t now_unix_ms() {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
}

}  // namespace

const char* tier_name(DimensionTier tier) {
    switch (tier) {
        case DimensionTier::Original: return "original";
        case DimensionTier::Half: return "half";
        case DimensionTier::Lowest: return "lowest";
        case DimensionTier::Three: return "3";
        case DimensionTier::Two: return "2";
    }
    return "unknown";
}

DimensionTier tier_from_name(const std::string& name) {
    if (name == "original") return DimensionTier::Original;
    if (name == "half") return DimensionTier::Half;
    if (name == "lowest" || name == "8") return DimensionTier::Lowest;
    if (name == "3" || name == "three") return DimensionTier::Three;
    if (name == "2" || name == "two") return DimensionTier::Two;
    throw ParseError("unknown dimension tier: " + name);
}

std::size_t tier_dimension(DimensionTier tier, std::size_t n_dims,
                           std::optional<std::size_t> half_override) {
    switch (tier) {
        case DimensionTier::Original: return n_dims;
        case DimensionTier::Half: return half_override.value_or(n_dims / 2);
        case DimensionTier::Lowest: return 8;
        case DimensionTier::Three: return 3;
        case DimensionTier::Two: return 2;
    }
    return n_dims;
}

const char* detector_name(DetectorKind kind) {
    return kind == DetectorKind::Mutant ? "mutant" : "transformer";
}

std::string CellIdentity::key() const {
    return dataset + "|" + detector + "|" + reducer + "|" + tier + "|" + std::to_string(dim) +
           "|" + std::to_string(seed);
}

namespace {

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.name = j.value("name", s.name);
    s.n_dims = j.value("n_dims", s.n_dims);
    s.length = j.value("length", s.length);
    s.seed = j.value("seed", s.seed);
    const auto type = [&](const char* name, AnomalyTypeSpec& t) {
        if (!j.contains(name)) return;
        const auto& tj = j.at(name);
        t.count = tj.value("count", t.count);
        t.magnitude = tj.value("magnitude", t.magnitude);
        t.width = tj.value("width", t.width);
    };
    type("spikes", s.spikes);
    type("correlation_breaks", s.correlation_breaks);
    type("level_shifts", s.level_shifts);
    s.latent_sinusoids = j.value("latent_sinusoids", s.latent_sinusoids);
    s.noise_scale = j.value("noise_scale", s.noise_scale);
    s.ar_coefficient = j.value("ar_coefficient", s.ar_coefficient);
    return s;
}

void mutant_config_from_json(const nlohmann::json& j, MutantConfig& c) {
    c.window_length = j.value("window_length", c.window_length);
    c.stride = j.value("stride", c.stride);
    c.correlation_threshold = j.value("correlation_threshold", c.correlation_threshold);
    c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
    c.gcn_dim = j.value("gcn_dim", c.gcn_dim);
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
}

void transformer_config_from_json(const nlohmann::json& j, TransformerConfig& c) {
    c.window = j.value("window", c.window);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.d_model = j.value("d_model", c.d_model);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.lambda = j.value("lambda", c.lambda);
    c.smoothing = j.value("smoothing", c.smoothing);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.anomaly_ratio = j.value("anomaly_ratio", c.anomaly_ratio);
}

}  // namespace

SyntheticSpec synthetic_spec_from_json_file(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw ParseError("cannot open " + json_path.string());
    nlohmann::json j;
    in >> j;
    return synthetic_spec_from_json(j);
}

ExperimentGridConfig load_grid_config(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw ParseError("cannot open " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }

    ExperimentGridConfig cfg;
    for (const auto& dj : j.at("datasets")) {
        DatasetSource src;
        if (dj.contains("synthetic")) {
            src.is_synthetic = true;
            src.synthetic = synthetic_spec_from_json(dj.at("synthetic"));
            src.name = src.synthetic.name;
        } else {
            src.manifest_dir = dj.at("manifest_dir").get<std::string>();
            src.name = dj.value("name", src.manifest_dir.filename().string());
        }
        cfg.datasets.push_back(std::move(src));
    }
    if (j.contains("detectors")) {
        cfg.detectors.clear();
        for (const auto& d : j.at("detectors")) {
            const auto name = d.get<std::string>();
            if (name == "mutant")
                cfg.detectors.push_back(DetectorKind::Mutant);
            else if (name == "transformer")
                cfg.detectors.push_back(DetectorKind::Transformer);
            else
                throw ParseError("unknown detector: " + name);
        }
    }
    if (j.contains("reducers")) {
        cfg.reducers.clear();
        for (const auto& r : j.at("reducers")) {
            const auto name = r.get<std::string>();
            cfg.reducers.push_back(name == "none" ? name
                                                  : reducer_kind_name(reducer_kind_from_name(name)));
        }
    }
    if (j.contains("tiers")) {
        cfg.tiers.clear();
        for (const auto& t : j.at("tiers")) cfg.tiers.push_back(tier_from_name(t.get<std::string>()));
    }
    if (j.contains("mutant")) mutant_config_from_json(j.at("mutant"), cfg.mutant);
    if (j.contains("transformer"))
        transformer_config_from_json(j.at("transformer"), cfg.transformer);
    if (j.contains("umap")) {
        const auto& u = j.at("umap");
        cfg.umap.n_neighbors = u.value("n_neighbors", cfg.umap.n_neighbors);
        cfg.umap.min_dist = u.value("min_dist", cfg.umap.min_dist);
        cfg.umap.epochs = u.value("epochs", cfg.umap.epochs);
        cfg.umap.learning_rate = u.value("learning_rate", cfg.umap.learning_rate);
        cfg.umap.negative_samples = u.value("negative_samples", cfg.umap.negative_samples);
    }
    if (j.contains("tsne")) {
        const auto& t = j.at("tsne");
        cfg.tsne.perplexity = t.value("perplexity", cfg.tsne.perplexity);
        cfg.tsne.exaggeration = t.value("exaggeration", cfg.tsne.exaggeration);
        cfg.tsne.exaggeration_iters = t.value("exaggeration_iters", cfg.tsne.exaggeration_iters);
        cfg.tsne.total_iters = t.value("total_iters", cfg.tsne.total_iters);
        cfg.tsne.learning_rate = t.value("learning_rate", cfg.tsne.learning_rate);
    }
    cfg.sample_cap = j.value("sample_cap", cfg.sample_cap);
    if (j.contains("normalization")) {
        const auto n = j.at("normalization").get<std::string>();
        if (n == "none")
            cfg.normalization = Normalization::None;
        else if (n == "zscore")
            cfg.normalization = Normalization::ZScore;
        else if (n == "minmax")
            cfg.normalization = Normalization::MinMax;
        else
            throw ParseError("unknown normalization: " + n);
    }
    if (j.contains("threshold")) {
        const auto& t = j.at("threshold");
        const auto kind = t.value("kind", std::string("best_f1_sweep"));
        if (kind == "ratio_percentile") {
            cfg.threshold.kind = ThresholdPolicy::Kind::RatioPercentile;
            cfg.threshold.ratio = t.value("ratio", cfg.threshold.ratio);
        } else if (kind == "best_f1_sweep") {
            cfg.threshold.kind = ThresholdPolicy::Kind::BestF1Sweep;
            cfg.threshold.grid_size = t.value("grid_size", cfg.threshold.grid_size);
        } else {
            throw ParseError("unknown threshold kind: " + kind);
        }
    }
    cfg.point_adjust = j.value("point_adjust", cfg.point_adjust);
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
    }
    cfg.output_dir = j.value("output_dir", cfg.output_dir.string());
    if (j.contains("half_dim_overrides"))
        for (const auto& [name, dim] : j.at("half_dim_overrides").items())
            cfg.half_dim_overrides[name] = dim.get<std::size_t>();
    return cfg;
}

std::vector<PlannedCell> enumerate_cells(
    const ExperimentGridConfig& cfg, const std::map<std::string, std::size_t>& dataset_dims) {
    std::vector<PlannedCell> cells;
    for (const auto& detector : cfg.detectors) {
        for (const auto tier : cfg.tiers) {
            for (const auto& reducer : cfg.reducers) {
                const bool is_none = reducer == "none";
                if (is_none != (tier == DimensionTier::Original))
                    continue;  // structural pairing, not a constraint skip
                for (const auto& ds : cfg.datasets) {
                    const std::size_t n = dataset_dims.at(ds.name);
                    std::optional<std::size_t> half;
                    if (const auto it = cfg.half_dim_overrides.find(ds.name);
                        it != cfg.half_dim_overrides.end())
                        half = it->second;
                    const std::size_t dim = tier_dimension(tier, n, half);
                    for (const auto seed : cfg.seeds) {
                        PlannedCell cell;
                        cell.cell = {ds.name, detector_name(detector), reducer,
                                     tier_name(tier), dim, seed};
                        if (detector == DetectorKind::Mutant && dim < 8) {
                            cell.skip = true;
                            cell.skip_reason =
                                "detector accepts no fewer than 8 dimensions (got " +
                                std::to_string(dim) + ")";
                        } else if (reducer == "tsne" && dim > 3) {
                            cell.skip = true;
                            cell.skip_reason = "t-SNE supports at most 3 target dimensions (got " +
                                               std::to_string(dim) + ")";
                        } else if (!is_none && dim >= n) {
                            cell.skip = true;
                            cell.skip_reason = "target dimension " + std::to_string(dim) +
                                               " is not below input dimension " +
                                               std::to_string(n);
                        }
                        cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }
    return cells;
}

namespace {

ExperimentRecord execute_cell(const ExperimentGridConfig& cfg, const CellIdentity& cell,
                              const TimeSeriesDataset& standardized) {
    ExperimentRecord rec;
    rec.cell = cell;

    const TimeSeriesDataset* input = &standardized;
    TimeSeriesDataset reduced;
    if (cell.reducer != "none") {
        ReducerSpec spec;
        spec.kind = reducer_kind_from_name(cell.reducer);
        spec.target_dim = cell.dim;
        spec.seed = cell.seed;
        spec.umap = cfg.umap;
        spec.tsne = cfg.tsne;
        spec.sample_cap = cfg.sample_cap;
        const StopWatch watch;
        reduced = reduce_dataset(standardized, spec);
        rec.fit_seconds = watch.seconds();
        input = &reduced;
    }

    AnomalyScoreSeries scores;
    if (cell.detector == "mutant") {
        MutantConfig mc = cfg.mutant;
        mc.seed = cell.seed;
        const StopWatch train_watch;
        const MutantModel model = train_mutant(*input, mc);
        rec.train_seconds = train_watch.seconds();
        rec.loss_trace = model.loss_trace;
        const StopWatch score_watch;
        scores = score_mutant(model, *input);
        rec.score_seconds = score_watch.seconds();
    } else {
        TransformerConfig tc = cfg.transformer;
        tc.seed = cell.seed;
        const StopWatch train_watch;
        const TransformerModel model = train_minimax(*input, tc);
        rec.train_seconds = train_watch.seconds();
        rec.loss_trace = model.loss_trace;
        const StopWatch score_watch;
        scores = score_series(model, *input);
        rec.score_seconds = score_watch.seconds();
    }

    rec.eval = evaluate(scores, input->labels, cfg.threshold, cfg.point_adjust);
    rec.status = "done";
    rec.completed_unix_ms = now_unix_ms();
    return rec;
}

}  // namespace

RunSummary run_grid(const ExperimentGridConfig& cfg, std::size_t jobs, bool resume) {
    std::filesystem::create_directories(cfg.output_dir);
    const auto store_path = cfg.output_dir / "results.jsonl";

    std::set<std::string> completed;
    if (resume && std::filesystem::exists(store_path)) {
        for (const auto& rec : load_results(store_path)) completed.insert(rec.cell.key());
    }

    // Load or generate datasets, then standardize once each.
    std::map<std::string, TimeSeriesDataset> datasets;
    std::map<std::string, std::size_t> dims;
    for (const auto& src : cfg.datasets) {
        TimeSeriesDataset raw =
            src.is_synthetic ? generate_synthetic(src.synthetic)
                             : load_dataset(src.manifest_dir,
                                            load_manifest(src.manifest_dir / "manifest.json"));
        dims[src.name] = raw.manifest.n_dims;
        datasets[src.name] = standardize(raw, cfg.normalization).first;
    }

    const auto cells = enumerate_cells(cfg, dims);

    std::ofstream store(store_path, std::ios::app);
    std::mutex store_mutex;
    RunSummary summary;
    const auto append = [&](const ExperimentRecord& rec) {
        const std::lock_guard<std::mutex> lock(store_mutex);
        store << record_to_json(rec) << '\n';
        store.flush();
        if (rec.status == "done")
            ++summary.executed;
        else if (rec.status == "skipped")
            ++summary.skipped;
        else
            ++summary.failed;
    };

    std::vector<const PlannedCell*> pending;
    for (const auto& cell : cells) {
        if (completed.contains(cell.cell.key())) {
            ++summary.resumed;
            continue;
        }
        if (cell.skip) {
            ExperimentRecord rec;
            rec.cell = cell.cell;
            rec.status = "skipped";
            rec.reason = cell.skip_reason;
            rec.completed_unix_ms = now_unix_ms();
            append(rec);
            continue;
        }
        pending.push_back(&cell);
    }

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= pending.size()) return;
            const PlannedCell& cell = *pending[idx];
            ExperimentRecord rec;
            try {
                rec = execute_cell(cfg, cell.cell, datasets.at(cell.cell.dataset));
            } catch (const std::exception& e) {
                rec = {};
                rec.cell = cell.cell;
                rec.status = "failed";
                rec.reason = e.what();
                rec.completed_unix_ms = now_unix_ms();
            }
            append(rec);
        }
    };

    const std::size_t thread_count = std::max<std::size_t>(1, std::min(jobs, pending.size()));
    if (thread_count <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < thread_count; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return summary;
}

std::string record_to_json(const ExperimentRecord& r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.cell.dataset;
    j["detector"] = r.cell.detector;
    j["reducer"] = r.cell.reducer;
    j["tier"] = r.cell.tier;
    j["dim"] = r.cell.dim;
    j["seed"] = r.cell.seed;
    j["status"] = r.status;
    j["reason"] = r.reason;
    j["fit_seconds"] = r.fit_seconds;
    j["train_seconds"] = r.train_seconds;
    j["score_seconds"] = r.score_seconds;
    j["threshold"] = r.eval.threshold;
    j["policy"] = r.eval.policy;
    j["point_adjust"] = r.eval.point_adjust;
    j["tp"] = r.eval.tp;
    j["fp"] = r.eval.fp;
    j["fn"] = r.eval.fn;
    j["precision"] = r.eval.precision;
    j["recall"] = r.eval.recall;
    j["f1"] = r.eval.f1;
    j["loss_trace"] = r.loss_trace;
    j["compute"] = r.compute;
    j["completed_unix_ms"] = r.completed_unix_ms;
    return j.dump();
}

ExperimentRecord record_from_json(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    ExperimentRecord r;
    r.cell.dataset = j.at("dataset").get<std::string>();
    r.cell.detector = j.at("detector").get<std::string>();
    r.cell.reducer = j.at("reducer").get<std::string>();
    r.cell.tier = j.at("tier").get<std::string>();
    r.cell.dim = j.at("dim").get<std::size_t>();
    r.cell.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.reason = j.at("reason").get<std::string>();
    r.fit_seconds = j.at("fit_seconds").get<double>();
    r.train_seconds = j.at("train_seconds").get<double>();
    r.score_seconds = j.at("score_seconds").get<double>();
    r.eval.threshold = j.at("threshold").get<double>();
    r.eval.policy = j.at("policy").get<std::string>();
    r.eval.point_adjust = j.at("point_adjust").get<bool>();
    r.eval.tp = j.at("tp").get<std::uint64_t>();
    r.eval.fp = j.at("fp").get<std::uint64_t>();
    r.eval.fn = j.at("fn").get<std::uint64_t>();
    r.eval.precision = j.at("precision").get<double>();
    r.eval.recall = j.at("recall").get<double>();
    r.eval.f1 = j.at("f1").get<double>();
    r.loss_trace = j.at("loss_trace").get<Vector>();
    r.compute = j.at("compute").get<std::string>();
    r.completed_unix_ms = j.at("completed_unix_ms").get<std::uint64_t>();
    return r;
}

std::vector<ExperimentRecord> load_results(const std::filesystem::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw ParseError("cannot open " + jsonl_path.string());
    std::vector<ExperimentRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(line));
    }
    return records;
}

}  // namespace drtsad
