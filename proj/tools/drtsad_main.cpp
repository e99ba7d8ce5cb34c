#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "drtsad/dataset.hpp"
#include "drtsad/errors.hpp"
#include "drtsad/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path, std::size_t jobs, bool resume) {
    drtsad::ExperimentGridConfig cfg = drtsad::load_grid_config(config_path);
    if (const char* env_seed = std::getenv("DRTSAD_SEED")) {
        cfg.seeds = {static_cast<std::uint64_t>(std::stoull(env_seed))};
        std::cout << "seed overridden by DRTSAD_SEED=" << env_seed << "\n";
    }
    const auto summary = drtsad::run_grid(cfg, jobs, resume);
    std::cout << "grid complete: " << summary.executed << " done, " << summary.skipped
              << " skipped, " << summary.failed << " failed";
    if (resume) std::cout << ", " << summary.resumed << " reused from store";
    std::cout << "\nresults: " << (cfg.output_dir / "results.jsonl").string() << "\n";
    return summary.failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& store_path, const std::string& out_dir) {
    const auto records = drtsad::load_results(store_path);
    drtsad::emit_results_table(records, out_dir);
    drtsad::emit_timing_outputs(records, out_dir);
    drtsad::emit_loss_traces(records, out_dir);
    std::cout << "report written to " << out_dir << " (" << records.size() << " records)\n";
    return 0;
}

int cmd_validate(const std::string& dataset_dir) {
    const auto manifest = drtsad::load_manifest(std::filesystem::path(dataset_dir) /
                                                "manifest.json");
    const auto ds = drtsad::load_dataset(dataset_dir, manifest);
    const auto report = drtsad::validate_manifest(ds);
    for (const auto& field : report.fields)
        std::cout << (field.pass ? "PASS" : "FAIL") << "  " << field.field << ": expected "
                  << field.expected << ", observed " << field.observed << "\n";
    std::cout << (report.pass ? "dataset matches its manifest\n"
                              : "dataset does NOT match its manifest\n");
    return report.pass ? 0 : 1;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    const auto spec = drtsad::synthetic_spec_from_json_file(spec_path);
    const auto ds = drtsad::generate_synthetic(spec);
    drtsad::save_dataset(ds, out_dir);
    std::cout << "wrote " << ds.manifest.name << ": " << ds.manifest.train_rows << " train / "
              << ds.manifest.test_rows << " test rows, " << ds.manifest.n_dims
              << " dims, anomaly fraction " << ds.manifest.anomaly_fraction << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dimensionality-reduction-then-detect benchmark for multivariate time series"};
    app.require_subcommand(1);

    std::string config_path, store_path, out_dir = "report", dataset_dir, spec_path;
    std::size_t jobs = 1;
    bool resume = false;

    auto* run = app.add_subcommand("run", "execute an experiment grid");
    run->add_option("--config", config_path, "grid config JSON")->required();
    run->add_option("--jobs", jobs, "parallel cell workers");
    run->add_flag("--resume", resume, "reuse completed cells from the result store");

    auto* report = app.add_subcommand("report", "render tables and plots from a result store");
    report->add_option("--store", store_path, "results.jsonl path")->required();
    report->add_option("--out", out_dir, "output directory");

    auto* validate = app.add_subcommand("validate", "check a dataset against its manifest");
    validate->add_option("--dataset", dataset_dir, "dataset directory")->required();

    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
    synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, jobs, resume);
        if (report->parsed()) return cmd_report(store_path, out_dir);
        if (validate->parsed()) return cmd_validate(dataset_dir);
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    } catch (const drtsad::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
