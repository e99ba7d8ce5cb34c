#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "drtsad/experiment.hpp"

namespace drtsad {

namespace {

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

int tier_rank(const std::string& tier) {
    if (tier == "original") return 0;
    if (tier == "half") return 1;
    if (tier == "lowest") return 2;
    if (tier == "3") return 3;
    if (tier == "2") return 4;
    return 5;
}

int reducer_rank(const std::string& reducer) {
    if (reducer == "none") return 0;
    if (reducer == "pca") return 1;
    if (reducer == "random_projection") return 2;
    if (reducer == "umap") return 3;
    if (reducer == "tsne") return 4;
    return 5;
}

std::vector<ExperimentRecord> sorted_records(std::vector<ExperimentRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const ExperimentRecord& a, const ExperimentRecord& b) {
                  const auto key = [](const ExperimentRecord& r) {
                      return std::tuple(r.cell.detector, tier_rank(r.cell.tier),
                                        reducer_rank(r.cell.reducer), r.cell.dataset,
                                        r.cell.seed);
                  };
                  return key(a) < key(b);
              });
    return records;
}

}  // namespace

void emit_results_table(const std::vector<ExperimentRecord>& input,
                        const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto records = sorted_records(input);

    // Flat CSV, one row per record; doubles at 17 significant digits so the
    // file re-parses to the exact in-memory values.
    {
        std::ofstream csv(out_dir / "results_table.csv");
        csv << "dataset,detector,reducer,tier,dim,seed,status,reason,threshold,policy,"
               "point_adjust,tp,fp,fn,precision,recall,f1\n";
        for (const auto& r : records) {
            std::string reason = r.reason;
            std::replace(reason.begin(), reason.end(), ',', ';');
            std::replace(reason.begin(), reason.end(), '\n', ' ');
            csv << r.cell.dataset << ',' << r.cell.detector << ',' << r.cell.reducer << ','
                << r.cell.tier << ',' << r.cell.dim << ',' << r.cell.seed << ',' << r.status
                << ',' << reason << ',' << format_g17(r.eval.threshold) << ',' << r.eval.policy
                << ',' << (r.eval.point_adjust ? 1 : 0) << ',' << r.eval.tp << ',' << r.eval.fp
                << ',' << r.eval.fn << ',' << format_g17(r.eval.precision) << ','
                << format_g17(r.eval.recall) << ',' << format_g17(r.eval.f1) << '\n';
        }
    }

    // Markdown mirror of the paper-style layout: rows are model x tier x
    // reducer, columns are P/R/F1 per dataset, best value per column flagged.
    std::vector<std::string> datasets;
    for (const auto& r : records)
        if (std::find(datasets.begin(), datasets.end(), r.cell.dataset) == datasets.end())
            datasets.push_back(r.cell.dataset);
    std::sort(datasets.begin(), datasets.end());

    struct RowKey {
        std::string detector, tier, reducer;
        std::size_t dim;
        auto operator<=>(const RowKey&) const = default;
    };
    struct CellMetrics {
        double precision = 0, recall = 0, f1 = 0;
        std::size_t count = 0;
        std::string status;
        std::string reason;
    };
    std::vector<RowKey> row_order;
    std::map<RowKey, std::map<std::string, CellMetrics>> table;
    for (const auto& r : records) {
        const RowKey key{r.cell.detector, r.cell.tier, r.cell.reducer, r.cell.dim};
        if (!table.contains(key)) row_order.push_back(key);
        auto& cell = table[key][r.cell.dataset];
        if (r.status == "done") {
            cell.precision += r.eval.precision;
            cell.recall += r.eval.recall;
            cell.f1 += r.eval.f1;
            cell.count += 1;
            cell.status = "done";
        } else if (cell.count == 0) {
            cell.status = r.status;
            cell.reason = r.reason;
        }
    }
    std::stable_sort(row_order.begin(), row_order.end(), [](const RowKey& a, const RowKey& b) {
        return std::tuple(a.detector, tier_rank(a.tier), reducer_rank(a.reducer)) <
               std::tuple(b.detector, tier_rank(b.tier), reducer_rank(b.reducer));
    });

    // Best value per (dataset, metric) column among seed-averaged done cells.
    std::map<std::string, std::array<double, 3>> best;
    for (const auto& ds : datasets) best[ds] = {-1.0, -1.0, -1.0};
    for (const auto& [key, row] : table)
        for (const auto& [ds, cell] : row)
            if (cell.count > 0) {
                const double n = static_cast<double>(cell.count);
                best[ds][0] = std::max(best[ds][0], cell.precision / n);
                best[ds][1] = std::max(best[ds][1], cell.recall / n);
                best[ds][2] = std::max(best[ds][2], cell.f1 / n);
            }

    std::ofstream md(out_dir / "results_table.md");
    md << "# Detection quality\n\n";
    md << "| Model | Dim tier | Reducer |";
    for (const auto& ds : datasets) md << " " << ds << " P | " << ds << " R | " << ds << " F1 |";
    md << "\n|---|---|---|";
    for (std::size_t i = 0; i < datasets.size() * 3; ++i) md << "---|";
    md << "\n";
    std::vector<std::string> footnotes;
    for (const auto& key : row_order) {
        md << "| " << key.detector << " | " << key.tier << " (" << key.dim << ") | "
           << key.reducer << " |";
        for (const auto& ds : datasets) {
            const auto it = table.at(key).find(ds);
            if (it == table.at(key).end() || it->second.count == 0) {
                std::string note;
                if (it != table.at(key).end() && !it->second.reason.empty()) {
                    footnotes.push_back(key.detector + "/" + key.tier + "/" + key.reducer +
                                        "/" + ds + ": " + it->second.status + " — " +
                                        it->second.reason);
                    note = "[^" + std::to_string(footnotes.size()) + "]";
                }
                md << " —" << note << " | —" << note << " | —" << note << " |";
                continue;
            }
            const auto& cell = it->second;
            const double n = static_cast<double>(cell.count);
            const double values[3] = {cell.precision / n, cell.recall / n, cell.f1 / n};
            for (int metric = 0; metric < 3; ++metric) {
                const bool is_best = std::abs(values[metric] - best[ds][metric]) < 1e-12;
                md << ' ' << (is_best ? "**" : "") << format_fixed(values[metric], 4)
                   << (is_best ? "**" : "") << " |";
            }
        }
        md << "\n";
    }
    if (!footnotes.empty()) {
        md << "\n";
        for (std::size_t i = 0; i < footnotes.size(); ++i)
            md << "[^" << (i + 1) << "]: " << footnotes[i] << "\n";
    }
    md << "\nValues are means over seeds; per-seed rows are in results_table.csv.\n";
}

void emit_timing_outputs(const std::vector<ExperimentRecord>& input,
                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto records = sorted_records(input);

    std::ofstream md(out_dir / "timing_table.md");
    md << "# Training time\n\n";
    md << "| Model | Dataset | Dimensionality | Compute | Hours |\n|---|---|---|---|---|\n";
    for (const auto& r : records) {
        if (r.status != "done") continue;
        md << "| " << r.cell.detector << " | " << r.cell.dataset << " | "
           << (r.cell.tier == "original" ? "Original" : std::to_string(r.cell.dim)) << " | "
           << r.compute << " | " << format_fixed(r.train_seconds / 3600.0, 4) << " |\n";
    }

    // Reduction aggregates: original-vs-reduced ratio per model/dataset,
    // reported both as a ratio and as (ratio - 1) * 100 percent.
    std::map<std::pair<std::string, std::string>, double> original_time;
    for (const auto& r : records)
        if (r.status == "done" && r.cell.tier == "original")
            original_time[{r.cell.detector, r.cell.dataset}] = r.train_seconds;
    md << "\n## Time reduction vs original dimensionality\n\n";
    md << "| Model | Dataset | Dimensionality | Ratio (orig/reduced) | Reduction % |\n"
          "|---|---|---|---|---|\n";
    for (const auto& r : records) {
        if (r.status != "done" || r.cell.tier == "original") continue;
        const auto it = original_time.find({r.cell.detector, r.cell.dataset});
        if (it == original_time.end() || r.train_seconds <= 0.0) continue;
        const double ratio = it->second / r.train_seconds;
        md << "| " << r.cell.detector << " | " << r.cell.dataset << " | " << r.cell.dim
           << " | " << format_fixed(ratio, 2) << "x | " << format_fixed((ratio - 1.0) * 100.0, 0)
           << "% |\n";
    }

    // Grouped bar chart: one group per (model, dataset), one bar per tier.
    struct Bar {
        std::string label;
        double hours;
    };
    std::map<std::string, std::vector<Bar>> groups;
    std::vector<std::string> group_order;
    for (const auto& r : records) {
        if (r.status != "done") continue;
        const std::string group = r.cell.detector + " / " + r.cell.dataset;
        if (!groups.contains(group)) group_order.push_back(group);
        const std::string label =
            r.cell.tier == "original" ? "orig" : std::to_string(r.cell.dim);
        auto& bars = groups[group];
        const auto existing = std::find_if(bars.begin(), bars.end(),
                                           [&](const Bar& b) { return b.label == label; });
        if (existing == bars.end())
            bars.push_back({label, r.train_seconds / 3600.0});
        else
            existing->hours = std::max(existing->hours, r.train_seconds / 3600.0);
    }

    double max_hours = 1e-9;
    std::size_t total_bars = 0;
    for (const auto& g : group_order) {
        for (const auto& b : groups[g]) max_hours = std::max(max_hours, b.hours);
        total_bars += groups[g].size();
    }

    const double bar_w = 34.0, gap = 10.0, group_gap = 36.0;
    const double plot_h = 260.0, margin_left = 70.0, margin_bottom = 70.0, margin_top = 30.0;
    const double width = margin_left + 20.0 + static_cast<double>(total_bars) * (bar_w + gap) +
                         static_cast<double>(group_order.size()) * group_gap;
    const double height = plot_h + margin_bottom + margin_top;

    std::ofstream svg(out_dir / "timing.svg");
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n";
    svg << "<text x='" << width / 2 << "' y='18' text-anchor='middle' font-size='14'>"
        << "Training time by dimensionality (hours)</text>\n";
    svg << "<line x1='" << margin_left << "' y1='" << margin_top << "' x2='" << margin_left
        << "' y2='" << margin_top + plot_h << "' stroke='black'/>\n";
    svg << "<line x1='" << margin_left << "' y1='" << margin_top + plot_h << "' x2='"
        << width - 10 << "' y2='" << margin_top + plot_h << "' stroke='black'/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double frac = tick / 4.0;
        const double y = margin_top + plot_h * (1.0 - frac);
        svg << "<text x='" << margin_left - 6 << "' y='" << y + 4
            << "' text-anchor='end' font-size='10'>" << format_fixed(max_hours * frac, 3)
            << "</text>\n";
        svg << "<line x1='" << margin_left - 3 << "' y1='" << y << "' x2='" << margin_left
            << "' y2='" << y << "' stroke='black'/>\n";
    }
    const char* palette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2"};
    double x = margin_left + 20.0;
    for (const auto& g : group_order) {
        const double group_start = x;
        std::size_t bar_idx = 0;
        for (const auto& b : groups[g]) {
            const double h = plot_h * (b.hours / max_hours);
            svg << "<rect x='" << x << "' y='" << margin_top + plot_h - h << "' width='"
                << bar_w << "' height='" << h << "' fill='" << palette[bar_idx % 5]
                << "'/>\n";
            svg << "<text x='" << x + bar_w / 2 << "' y='" << margin_top + plot_h + 14
                << "' text-anchor='middle' font-size='10'>" << b.label << "</text>\n";
            x += bar_w + gap;
            ++bar_idx;
        }
        svg << "<text x='" << (group_start + x - gap) / 2 << "' y='"
            << margin_top + plot_h + 32 << "' text-anchor='middle' font-size='11'>" << g
            << "</text>\n";
        x += group_gap;
    }
    svg << "</svg>\n";
}

void emit_loss_traces(const std::vector<ExperimentRecord>& records,
                      const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (const auto& r : records) {
        if (r.status != "done" || r.loss_trace.empty()) continue;
        std::string name = r.cell.key();
        std::replace(name.begin(), name.end(), '|', '_');
        std::ofstream csv(out_dir / (name + "_loss.csv"));
        csv << "epoch,loss\n";
        for (std::size_t i = 0; i < r.loss_trace.size(); ++i)
            csv << (i + 1) << ',' << format_g17(r.loss_trace[i]) << '\n';
    }
}

}  // namespace drtsad
