#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "drtsad/dataset.hpp"
#include "drtsad/errors.hpp"

using namespace drtsad;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("drtsad_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

SyntheticSpec small_spec(std::uint64_t seed = 5) {
    SyntheticSpec spec;
    spec.name = "toy";
    spec.n_dims = 6;
    spec.length = 600;
    spec.seed = seed;
    spec.spikes = {20, 8.0, 1};
    spec.correlation_breaks = {2, 1.0, 10};
    spec.level_shifts = {2, 3.0, 10};
    return spec;
}

}  // namespace

TEST_CASE("standardize centers and scales train columns with train statistics") {
    TimeSeriesDataset ds;
    ds.manifest = {"t", 2, 6, 4, 0.25, ""};
    ds.train = Matrix::from_rows({{3.0, 1.0}, {7.0, 1.0}, {5.0, 1.0},
                                  {3.0, 1.0}, {7.0, 1.0}, {5.0, 1.0}});
    ds.test = Matrix::from_rows({{5.0, 2.0}, {9.0, 2.0}, {1.0, 2.0}, {5.0, 2.0}});
    ds.labels = {0, 1, 0, 0};

    const auto [out, scaling] = standardize(ds, Normalization::ZScore);

    double mean = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += out.train(i, 0);
    mean /= 6.0;
    CHECK(std::abs(mean) < 1e-12);
    double var = 0.0;
    for (std::size_t i = 0; i < 6; ++i) var += out.train(i, 0) * out.train(i, 0);
    CHECK(std::abs(var / 5.0 - 1.0) < 1e-9);

    // Constant column: centered, not scaled.
    CHECK(scaling.scale[1] == 1.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.train(i, 1) == 0.0);

    // Test split transformed with train statistics, not its own.
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out.test(i, 0) ==
              doctest::Approx((ds.test(i, 0) - scaling.offset[0]) / scaling.scale[0]));
        CHECK(out.test(i, 1) == doctest::Approx(2.0 - scaling.offset[1]));
    }
}

TEST_CASE("standardize is idempotent on the train split") {
    auto ds = generate_synthetic(small_spec());
    const auto [once, s1] = standardize(ds, Normalization::ZScore);
    const auto [twice, s2] = standardize(once, Normalization::ZScore);
    for (std::size_t i = 0; i < once.train.data().size(); ++i)
        CHECK(std::abs(once.train.data()[i] - twice.train.data()[i]) < 1e-9);
}

TEST_CASE("make_windows counting") {
    Matrix m(10, 2);
    CHECK(make_windows(m, {5, 1}).size() == 6);
    CHECK(make_windows(m, {5, 5}).size() == 2);
    const auto w = make_windows(m, {5, 1});
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i].start == i);
}

TEST_CASE("make_windows rejects a short series") {
    Matrix m(4, 2);
    CHECK_THROWS_AS(make_windows(m, {5, 1}), SeriesTooShort);
}

TEST_CASE("make_windows covers every row when stride <= length") {
    Matrix m(23, 1);
    for (std::size_t i = 0; i < 23; ++i) m(i, 0) = double(i);
    const auto windows = make_windows(m, {6, 4});
    std::vector<bool> covered(23, false);
    for (const auto& w : windows)
        for (std::size_t r = 0; r < 6; ++r) covered[w.start + r] = true;
    // Full coverage up to the last full window; the tail shorter than one
    // stride may remain uncovered by construction.
    const std::size_t last_end = windows.back().start + 6;
    for (std::size_t i = 0; i < last_end; ++i) CHECK(covered[i]);
}

TEST_CASE("synthetic generation is deterministic and labels count exactly") {
    const auto spec = small_spec();
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.labels == b.labels);

    std::size_t marked = 0;
    for (auto v : a.labels) marked += v;
    CHECK(marked == 20 * 1 + 2 * 10 + 2 * 10);  // exact injected count
    CHECK(a.manifest.anomaly_fraction == doctest::Approx(double(marked) / 600.0));
}

TEST_CASE("synthetic generation rejects an out-of-range anomaly fraction") {
    auto spec = small_spec();
    spec.spikes = {0, 8.0, 1};
    spec.correlation_breaks = {0, 1.0, 10};
    spec.level_shifts = {0, 3.0, 10};
    CHECK_THROWS_AS(generate_synthetic(spec), PreconditionViolation);
}

TEST_CASE("dataset round-trips through the CSV layout bit-identically") {
    const auto ds = generate_synthetic(small_spec(9));
    const auto dir = temp_dir("roundtrip");
    save_dataset(ds, dir);
    const auto manifest = load_manifest(dir / "manifest.json");
    const auto loaded = load_dataset(dir, manifest);
    CHECK(loaded.train == ds.train);
    CHECK(loaded.test == ds.test);
    CHECK(loaded.labels == ds.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_dataset reports shape mismatches and parse errors") {
    const auto ds = generate_synthetic(small_spec(10));
    const auto dir = temp_dir("loader");
    save_dataset(ds, dir);

    auto manifest = load_manifest(dir / "manifest.json");

    SUBCASE("manifest with wrong dims") {
        manifest.n_dims += 1;
        CHECK_THROWS_AS(load_dataset(dir, manifest), ManifestMismatch);
    }
    SUBCASE("manifest with wrong train rows") {
        manifest.train_rows -= 1;
        CHECK_THROWS_AS(load_dataset(dir, manifest), ManifestMismatch);
    }
    SUBCASE("non-numeric cell carries row and column") {
        std::ofstream out(dir / "train.csv", std::ios::app);
        out.close();
        // Corrupt the first cell.
        std::ifstream in(dir / "train.csv");
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        in.close();
        content[0] = 'x';
        std::ofstream rewrite(dir / "train.csv");
        rewrite << content;
        rewrite.close();
        try {
            load_dataset(dir, manifest);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            const std::string what = e.what();
            CHECK(what.find("row 1") != std::string::npos);
            CHECK(what.find("col 1") != std::string::npos);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("validate_manifest passes self-consistent data and flags truncation") {
    auto ds = generate_synthetic(small_spec(11));
    CHECK(validate_manifest(ds).pass);

    SUBCASE("truncated test split fails on test_rows") {
        ds.test = rows_slice(ds.test, 0, ds.test.rows() - 5);
        const auto report = validate_manifest(ds);
        CHECK_FALSE(report.pass);
        bool found = false;
        for (const auto& f : report.fields)
            if (f.field == "test_rows") {
                found = true;
                CHECK_FALSE(f.pass);
            }
        CHECK(found);
    }
    SUBCASE("Table-1-shaped manifests validate against matching stand-ins") {
        // SMAP-shaped stand-in: 135183/427617/25 with label mean ~ 0.1313.
        TimeSeriesDataset smap;
        smap.manifest = {"SMAP", 25, 135183, 427617, 0.1313, "stand-in"};
        smap.train = Matrix(135183, 25);
        smap.test = Matrix(427617, 25);
        smap.labels.assign(427617, 0);
        const auto ones = static_cast<std::size_t>(std::llround(0.1313 * 427617.0));
        for (std::size_t i = 0; i < ones; ++i) smap.labels[i] = 1;
        CHECK(validate_manifest(smap).pass);
    }
}
