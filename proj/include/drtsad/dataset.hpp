#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drtsad/matrix.hpp"

namespace drtsad {

struct DatasetManifest {
    std::string name;
    std::size_t n_dims = 0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    double anomaly_fraction = 0.0;  // fraction of test timesteps labeled anomalous
    std::string citation;
};

/// Immutable after construction; safe to share across threads.
struct TimeSeriesDataset {
    DatasetManifest manifest;
    Matrix train;                      // train_rows x n_dims
    Matrix test;                       // test_rows x n_dims
    std::vector<std::uint8_t> labels;  // one 0/1 per test row
};

enum class Normalization { None, ZScore, MinMax };

/// Train-split statistics applied to both splits: x' = (x - offset) / scale.
struct FeatureScaling {
    Normalization kind = Normalization::ZScore;
    Vector offset;
    Vector scale;
};

struct WindowConfig {
    std::size_t length = 64;
    std::size_t stride = 8;
};

struct Window {
    std::size_t start = 0;
    Matrix data;  // length x n_dims
};

struct AnomalyTypeSpec {
    std::size_t count = 0;
    double magnitude = 1.0;
    std::size_t width = 1;  // timesteps per event
};

/// Parameters for the labeled synthetic generator. The base process is a set
/// of shared latent sinusoids mixed into every channel plus per-channel AR(1)
/// noise, so correlation-break anomalies are meaningful.
struct SyntheticSpec {
    std::string name = "synthetic";
    std::size_t n_dims = 16;
    std::size_t length = 10000;  // rows per split; train is clean, test carries anomalies
    std::uint64_t seed = 1;

    AnomalyTypeSpec spikes{100, 8.0, 1};
    AnomalyTypeSpec correlation_breaks{9, 1.0, 50};
    AnomalyTypeSpec level_shifts{9, 3.0, 50};

    std::size_t latent_sinusoids = 3;
    double noise_scale = 0.1;  // AR(1) innovation stddev
    double ar_coefficient = 0.7;

    double anomaly_fraction() const;
};

/// Reads train.csv / test.csv / labels.csv from `dir` and checks shapes
/// against the manifest. Throws ManifestMismatch or ParseError.
TimeSeriesDataset load_dataset(const std::filesystem::path& dir,
                               const DatasetManifest& manifest);

/// Writes the canonical CSV layout plus manifest.json (17 significant digits,
/// round-trip exact).
void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir);

DatasetManifest load_manifest(const std::filesystem::path& json_path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& json_path);

/// Statistics come from the train split only; both splits are transformed with
/// them. Constant features are centered but not scaled.
std::pair<TimeSeriesDataset, FeatureScaling> standardize(
    const TimeSeriesDataset& ds, Normalization kind = Normalization::ZScore);

/// Contiguous windows with the given stride. Throws SeriesTooShort if the
/// series has fewer rows than one window.
std::vector<Window> make_windows(const Matrix& m, const WindowConfig& cfg);

/// Deterministic labeled dataset from the spec. Throws PreconditionViolation
/// when the injected anomaly fraction falls outside (0.05, 0.15).
TimeSeriesDataset generate_synthetic(const SyntheticSpec& spec);

struct ValidationField {
    std::string field;
    std::string expected;
    std::string observed;
    bool pass = false;
};

struct ValidationReport {
    std::vector<ValidationField> fields;
    bool pass = false;
};

/// Compares observed shapes and label statistics against the manifest.
/// Failures land in the report; nothing throws.
ValidationReport validate_manifest(const TimeSeriesDataset& ds);

}  // namespace drtsad
