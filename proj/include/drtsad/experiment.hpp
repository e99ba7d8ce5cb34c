#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drtsad/dataset.hpp"
#include "drtsad/detector_mutant.hpp"
#include "drtsad/detector_transformer.hpp"
#include "drtsad/dimreduce.hpp"
#include "drtsad/evaluation.hpp"

namespace drtsad {

struct DatasetSource {
    std::string name;
    std::filesystem::path manifest_dir;  // canonical CSV layout; unset for synthetic
    SyntheticSpec synthetic;
    bool is_synthetic = false;
};

enum class DimensionTier { Original, Half, Lowest, Three, Two };

const char* tier_name(DimensionTier tier);
DimensionTier tier_from_name(const std::string& name);

/// Target dimension per tier: original n, floor(n/2) (override allowed),
/// the lowest MUTANT-compatible 8, and the transformer-only 3 and 2.
std::size_t tier_dimension(DimensionTier tier, std::size_t n_dims,
                           std::optional<std::size_t> half_override);

enum class DetectorKind { Mutant, Transformer };
const char* detector_name(DetectorKind kind);

struct ExperimentGridConfig {
    std::vector<DatasetSource> datasets;
    std::vector<DetectorKind> detectors{DetectorKind::Mutant, DetectorKind::Transformer};
    std::vector<std::string> reducers{"none", "pca", "random_projection", "umap", "tsne"};
    std::vector<DimensionTier> tiers{DimensionTier::Original, DimensionTier::Half,
                                     DimensionTier::Lowest, DimensionTier::Three,
                                     DimensionTier::Two};
    MutantConfig mutant;
    TransformerConfig transformer;
    UmapParams umap;
    TsneParams tsne;
    std::size_t sample_cap = 20000;
    Normalization normalization = Normalization::ZScore;
    ThresholdPolicy threshold;
    bool point_adjust = true;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output_dir = "out";
    std::map<std::string, std::size_t> half_dim_overrides;
};

struct CellIdentity {
    std::string dataset;
    std::string detector;
    std::string reducer;  // "none" or a reducer_kind_name
    std::string tier;
    std::size_t dim = 0;
    std::uint64_t seed = 0;

    std::string key() const;
};

struct ExperimentRecord {
    CellIdentity cell;
    std::string status;  // done | failed | skipped
    std::string reason;  // failure message or violated constraint
    double fit_seconds = 0.0;
    double train_seconds = 0.0;
    double score_seconds = 0.0;
    EvalReport eval;
    Vector loss_trace;
    std::string compute = "cpu";
    std::uint64_t completed_unix_ms = 0;
};

struct PlannedCell {
    CellIdentity cell;
    bool skip = false;
    std::string skip_reason;
};

ExperimentGridConfig load_grid_config(const std::filesystem::path& json_path);
SyntheticSpec synthetic_spec_from_json_file(const std::filesystem::path& json_path);

/// Expands the grid in a fixed order. The "none" reducer pairs only with the
/// original tier and vice versa; constraint-violating cells (MUTANT below 8
/// dims, t-SNE above 3, target dim not below input dim) become skips.
std::vector<PlannedCell> enumerate_cells(
    const ExperimentGridConfig& cfg, const std::map<std::string, std::size_t>& dataset_dims);

struct RunSummary {
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    std::size_t resumed = 0;
};

/// Executes the grid, appending one JSON record per cell per seed to
/// <output_dir>/results.jsonl through a serialized writer. Cell failures are
/// recorded and the grid continues. With `resume`, cells already in the store
/// are not re-executed.
RunSummary run_grid(const ExperimentGridConfig& cfg, std::size_t jobs = 1,
                    bool resume = false);

std::string record_to_json(const ExperimentRecord& record);
ExperimentRecord record_from_json(const std::string& line);
std::vector<ExperimentRecord> load_results(const std::filesystem::path& jsonl_path);

void emit_results_table(const std::vector<ExperimentRecord>& records,
                        const std::filesystem::path& out_dir);
void emit_timing_outputs(const std::vector<ExperimentRecord>& records,
                         const std::filesystem::path& out_dir);
void emit_loss_traces(const std::vector<ExperimentRecord>& records,
                      const std::filesystem::path& out_dir);

}  // namespace drtsad
