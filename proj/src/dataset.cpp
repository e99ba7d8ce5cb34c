#include "drtsad/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "drtsad/errors.hpp"
#include "drtsad/rng.hpp"

namespace drtsad {

namespace {

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Matrix read_csv_matrix(const std::filesystem::path& path, std::size_t expect_rows,
                       std::size_t expect_cols) {
    std::ifstream in(path);
    if (!in) throw ManifestMismatch("cannot open " + path.string());

    Matrix m(expect_rows, expect_cols);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        if (row >= expect_rows)
            throw ManifestMismatch(path.string() + ": expected " + std::to_string(expect_rows) +
                                   " rows, found more");
        std::size_t col = 0;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p <= end) {
            const char* cell_end = std::find(p, end, ',');
            if (col >= expect_cols)
                throw ManifestMismatch(path.string() + ": row " + std::to_string(row + 1) +
                                       ": expected " + std::to_string(expect_cols) +
                                       " columns, found more");
            double value = 0.0;
            auto [ptr, ec] = std::from_chars(p, cell_end, value);
            if (ec != std::errc() || ptr != cell_end)
                throw ParseError(path.string() + ": non-numeric cell at row " +
                                 std::to_string(row + 1) + ", col " + std::to_string(col + 1));
            m(row, col) = value;
            ++col;
            if (cell_end == end) break;
            p = cell_end + 1;
        }
        if (col != expect_cols)
            throw ManifestMismatch(path.string() + ": row " + std::to_string(row + 1) +
                                   ": expected " + std::to_string(expect_cols) +
                                   " columns, found " + std::to_string(col));
        ++row;
    }
    if (row != expect_rows)
        throw ManifestMismatch(path.string() + ": expected " + std::to_string(expect_rows) +
                               " rows, found " + std::to_string(row));
    return m;
}

std::vector<std::uint8_t> read_labels(const std::filesystem::path& path,
                                      std::size_t expect_rows) {
    std::ifstream in(path);
    if (!in) throw ManifestMismatch("cannot open " + path.string());
    std::vector<std::uint8_t> labels;
    labels.reserve(expect_rows);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        ++row;
        if (line == "0")
            labels.push_back(0);
        else if (line == "1")
            labels.push_back(1);
        else
            throw ParseError(path.string() + ": label must be 0 or 1 at row " +
                             std::to_string(row));
    }
    if (labels.size() != expect_rows)
        throw ManifestMismatch(path.string() + ": expected " + std::to_string(expect_rows) +
                               " labels, found " + std::to_string(labels.size()));
    return labels;
}

void write_csv_matrix(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    std::string line;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        line.clear();
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) line += ',';
            line += format_g17(m(i, j));
        }
        line += '\n';
        out << line;
    }
}

}  // namespace

double SyntheticSpec::anomaly_fraction() const {
    const double total = static_cast<double>(spikes.count * spikes.width +
                                             correlation_breaks.count * correlation_breaks.width +
                                             level_shifts.count * level_shifts.width);
    return total / static_cast<double>(length);
}

TimeSeriesDataset load_dataset(const std::filesystem::path& dir,
                               const DatasetManifest& manifest) {
    TimeSeriesDataset ds;
    ds.manifest = manifest;
    ds.train = read_csv_matrix(dir / "train.csv", manifest.train_rows, manifest.n_dims);
    ds.test = read_csv_matrix(dir / "test.csv", manifest.test_rows, manifest.n_dims);
    ds.labels = read_labels(dir / "labels.csv", manifest.test_rows);
    return ds;
}

void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_csv_matrix(ds.train, dir / "train.csv");
    write_csv_matrix(ds.test, dir / "test.csv");
    std::ofstream labels(dir / "labels.csv");
    for (std::uint8_t v : ds.labels) labels << int(v) << '\n';
    save_manifest(ds.manifest, dir / "manifest.json");
}

DatasetManifest load_manifest(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw ParseError("cannot open " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.n_dims = j.at("n_dims").get<std::size_t>();
    m.train_rows = j.at("train_rows").get<std::size_t>();
    m.test_rows = j.at("test_rows").get<std::size_t>();
    m.anomaly_fraction = j.at("anomaly_fraction").get<double>();
    if (j.contains("citation")) m.citation = j["citation"].get<std::string>();
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& json_path) {
    nlohmann::ordered_json j;
    j["name"] = manifest.name;
    j["n_dims"] = manifest.n_dims;
    j["train_rows"] = manifest.train_rows;
    j["test_rows"] = manifest.test_rows;
    j["anomaly_fraction"] = manifest.anomaly_fraction;
    if (!manifest.citation.empty()) j["citation"] = manifest.citation;
    std::ofstream out(json_path);
    out << j.dump(2) << '\n';
}

std::pair<TimeSeriesDataset, FeatureScaling> standardize(const TimeSeriesDataset& ds,
                                                         Normalization kind) {
    const std::size_t d = ds.train.cols();
    FeatureScaling scaling;
    scaling.kind = kind;
    scaling.offset.assign(d, 0.0);
    scaling.scale.assign(d, 1.0);

    if (kind == Normalization::ZScore) {
        scaling.offset = column_mean(ds.train);
        const std::size_t n = ds.train.rows();
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dv = ds.train(i, j) - scaling.offset[j];
                acc += dv * dv;
            }
            const double sd = n > 1 ? std::sqrt(acc / static_cast<double>(n - 1)) : 0.0;
            scaling.scale[j] = sd > 0.0 ? sd : 1.0;  // constant feature: center only
        }
    } else if (kind == Normalization::MinMax) {
        for (std::size_t j = 0; j < d; ++j) {
            double lo = ds.train(0, j), hi = ds.train(0, j);
            for (std::size_t i = 1; i < ds.train.rows(); ++i) {
                lo = std::min(lo, ds.train(i, j));
                hi = std::max(hi, ds.train(i, j));
            }
            scaling.offset[j] = lo;
            scaling.scale[j] = hi > lo ? hi - lo : 1.0;
        }
    }

    TimeSeriesDataset out = ds;
    const auto apply = [&](Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                m(i, j) = (m(i, j) - scaling.offset[j]) / scaling.scale[j];
    };
    if (kind != Normalization::None) {
        apply(out.train);
        apply(out.test);
    }
    return {std::move(out), std::move(scaling)};
}

std::vector<Window> make_windows(const Matrix& m, const WindowConfig& cfg) {
    if (cfg.length == 0 || cfg.stride == 0 || cfg.stride > cfg.length)
        throw PreconditionViolation("make_windows: need 1 <= stride <= length");
    if (m.rows() < cfg.length)
        throw SeriesTooShort("make_windows: series has " + std::to_string(m.rows()) +
                             " rows, window needs " + std::to_string(cfg.length));
    const std::size_t count = (m.rows() - cfg.length) / cfg.stride + 1;
    std::vector<Window> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * cfg.stride;
        out.push_back({start, rows_slice(m, start, cfg.length)});
    }
    return out;
}

namespace {

struct EventPlan {
    std::size_t start = 0;
    std::size_t width = 0;
    int type = 0;  // 0 spike, 1 correlation break, 2 level shift
};

// Non-overlapping placement with a 2-step gap so each event is its own
// labeled run. Deterministic given the RandomSource state.
std::vector<EventPlan> place_events(const SyntheticSpec& spec, RandomSource& rng) {
    std::vector<EventPlan> events;
    std::vector<std::uint8_t> occupied(spec.length, 0);
    const auto place = [&](std::size_t count, std::size_t width, int type) {
        for (std::size_t e = 0; e < count; ++e) {
            bool placed = false;
            for (int attempt = 0; attempt < 100000 && !placed; ++attempt) {
                const std::size_t max_start = spec.length - width;
                const std::size_t start = rng.next_below(max_start + 1);
                const std::size_t lo = start >= 2 ? start - 2 : 0;
                const std::size_t hi = std::min(spec.length, start + width + 2);
                bool free = true;
                for (std::size_t t = lo; t < hi && free; ++t) free = !occupied[t];
                if (!free) continue;
                for (std::size_t t = lo; t < hi; ++t) occupied[t] = 1;
                events.push_back({start, width, type});
                placed = true;
            }
            if (!placed)
                throw PreconditionViolation(
                    "generate_synthetic: cannot place anomaly events without overlap");
        }
    };
    place(spec.spikes.count, spec.spikes.width, 0);
    place(spec.correlation_breaks.count, spec.correlation_breaks.width, 1);
    place(spec.level_shifts.count, spec.level_shifts.width, 2);
    return events;
}

}  // namespace

TimeSeriesDataset generate_synthetic(const SyntheticSpec& spec) {
    const double fraction = spec.anomaly_fraction();
    if (!(fraction > 0.05 && fraction < 0.15))
        throw PreconditionViolation("generate_synthetic: anomaly fraction " +
                                    std::to_string(fraction) + " outside (0.05, 0.15)");
    if (spec.n_dims == 0 || spec.length == 0)
        throw PreconditionViolation("generate_synthetic: empty spec");

    RandomSource rng(spec.seed);
    const std::size_t n = spec.n_dims;
    const std::size_t k = spec.latent_sinusoids;
    const std::size_t total = 2 * spec.length;

    // Base process parameters.
    Vector omega(k), phase(k);
    for (std::size_t j = 0; j < k; ++j) {
        const double period = 50.0 + 350.0 * rng.next_double();
        omega[j] = 2.0 * std::numbers::pi / period;
        phase[j] = 2.0 * std::numbers::pi * rng.next_double();
    }
    Matrix mixing(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            mixing(i, j) = rng.next_normal();
            norm += mixing(i, j) * mixing(i, j);
        }
        norm = std::sqrt(norm);
        const double amp = 0.5 + rng.next_double();
        for (std::size_t j = 0; j < k; ++j) mixing(i, j) = amp * mixing(i, j) / norm;
    }
    Vector offset(n);
    for (std::size_t i = 0; i < n; ++i) offset[i] = rng.next_normal();

    // Generate train then test as one continuous process.
    Matrix train(spec.length, n), test(spec.length, n);
    Vector ar(n, 0.0);
    for (std::size_t t = 0; t < total; ++t) {
        Matrix& target = t < spec.length ? train : test;
        const std::size_t row = t < spec.length ? t : t - spec.length;
        for (std::size_t i = 0; i < n; ++i) {
            double base = offset[i];
            for (std::size_t j = 0; j < k; ++j)
                base += mixing(i, j) * std::sin(omega[j] * static_cast<double>(t) + phase[j]);
            ar[i] = spec.ar_coefficient * ar[i] + spec.noise_scale * rng.next_normal();
            target(row, i) = base + ar[i];
        }
    }

    // Per-channel train scale, used as the injection unit.
    Vector channel_sd(n, 0.0);
    const Vector train_mean = column_mean(train);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < spec.length; ++i) {
            const double d = train(i, j) - train_mean[j];
            acc += d * d;
        }
        channel_sd[j] = std::sqrt(acc / static_cast<double>(spec.length - 1));
    }

    const auto events = place_events(spec, rng);
    std::vector<std::uint8_t> labels(spec.length, 0);

    const auto pick_channels = [&](std::size_t how_many) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        for (std::size_t i = 0; i < how_many; ++i) {
            const std::size_t j = i + rng.next_below(n - i);
            std::swap(all[i], all[j]);
        }
        all.resize(how_many);
        return all;
    };
    const std::size_t subset = std::max<std::size_t>(1, n / 2);

    for (const auto& ev : events) {
        const auto channels = pick_channels(subset);
        for (std::size_t t = ev.start; t < ev.start + ev.width; ++t) labels[t] = 1;

        if (ev.type == 0) {  // point spike
            for (std::size_t c : channels) {
                const double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
                test(ev.start, c) += sign * spec.spikes.magnitude * channel_sd[c];
            }
        } else if (ev.type == 1) {  // correlation break: re-phase the latent part
            Vector new_phase(k);
            for (std::size_t j = 0; j < k; ++j)
                new_phase[j] = 2.0 * std::numbers::pi * rng.next_double();
            for (std::size_t c : channels) {
                for (std::size_t t = ev.start; t < ev.start + ev.width; ++t) {
                    const double abs_t = static_cast<double>(t + spec.length);
                    double old_latent = 0.0, new_latent = 0.0;
                    for (std::size_t j = 0; j < k; ++j) {
                        old_latent += mixing(c, j) * std::sin(omega[j] * abs_t + phase[j]);
                        new_latent += mixing(c, j) * std::sin(omega[j] * abs_t + new_phase[j]);
                    }
                    test(t, c) += spec.correlation_breaks.magnitude * new_latent - old_latent;
                }
            }
        } else {  // level shift
            const double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
            for (std::size_t c : channels)
                for (std::size_t t = ev.start; t < ev.start + ev.width; ++t)
                    test(t, c) += sign * spec.level_shifts.magnitude * channel_sd[c];
        }
    }

    TimeSeriesDataset ds;
    ds.manifest.name = spec.name;
    ds.manifest.n_dims = n;
    ds.manifest.train_rows = spec.length;
    ds.manifest.test_rows = spec.length;
    ds.manifest.anomaly_fraction = fraction;
    ds.manifest.citation = "generated";
    ds.train = std::move(train);
    ds.test = std::move(test);
    ds.labels = std::move(labels);
    return ds;
}

ValidationReport validate_manifest(const TimeSeriesDataset& ds) {
    ValidationReport report;
    const auto add = [&](std::string field, std::string expected, std::string observed,
                         bool pass) {
        report.fields.push_back({std::move(field), std::move(expected), std::move(observed),
                                 pass});
    };
    const auto& m = ds.manifest;

    add("n_dims", std::to_string(m.n_dims),
        std::to_string(ds.train.cols()) + "/" + std::to_string(ds.test.cols()),
        ds.train.cols() == m.n_dims && ds.test.cols() == m.n_dims);
    add("train_rows", std::to_string(m.train_rows), std::to_string(ds.train.rows()),
        ds.train.rows() == m.train_rows);
    add("test_rows", std::to_string(m.test_rows), std::to_string(ds.test.rows()),
        ds.test.rows() == m.test_rows);

    double label_mean = 0.0;
    for (std::uint8_t v : ds.labels) label_mean += v;
    label_mean = ds.labels.empty() ? 0.0 : label_mean / static_cast<double>(ds.labels.size());
    const bool frac_ok = ds.labels.size() == ds.test.rows() &&
                         std::abs(label_mean - m.anomaly_fraction) <= 0.005;
    add("anomaly_fraction", format_g17(m.anomaly_fraction), format_g17(label_mean), frac_ok);

    report.pass = std::all_of(report.fields.begin(), report.fields.end(),
                              [](const ValidationField& f) { return f.pass; });
    return report;
}

}  // namespace drtsad
