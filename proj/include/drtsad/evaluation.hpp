#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drtsad/matrix.hpp"

namespace drtsad {

struct AnomalyScoreSeries {
    Vector scores;  // one per test timestep, higher = more anomalous
    std::string detector;
    std::string config_fingerprint;
};

/// ratio_percentile flags scores above the (1 - r) empirical quantile and
/// needs no labels. best_f1_sweep picks the threshold maximizing F1 and is
/// oracle-informed (it reads labels); reports disclose which policy ran.
struct ThresholdPolicy {
    enum class Kind { RatioPercentile, BestF1Sweep };
    Kind kind = Kind::BestF1Sweep;
    double ratio = 0.10;        // RatioPercentile: fraction of points to flag
    std::size_t grid_size = 256;  // BestF1Sweep: candidate-threshold budget
};

struct EvalReport {
    double threshold = 0.0;
    bool point_adjust = false;
    std::string policy;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Binary predictions for the given policy. The sweep maximizes F1 after
/// point adjustment when `adjust_for_sweep` is set; candidates are every
/// distinct score when there are at most grid_size of them, otherwise a
/// geometric grid over (min, max]. Ties pick the lower threshold.
std::vector<std::uint8_t> apply_threshold(const Vector& scores, const ThresholdPolicy& policy,
                                          const std::vector<std::uint8_t>* labels = nullptr,
                                          bool adjust_for_sweep = true,
                                          double* chosen_threshold = nullptr);

/// Marks a whole ground-truth anomaly run detected when any prediction inside
/// it fires. Predictions outside label runs are untouched.
std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& predictions,
                                       const std::vector<std::uint8_t>& labels);

EvalReport prf(const std::vector<std::uint8_t>& predictions,
               const std::vector<std::uint8_t>& labels);

EvalReport evaluate(const AnomalyScoreSeries& scores, const std::vector<std::uint8_t>& labels,
                    const ThresholdPolicy& policy, bool adjust);

}  // namespace drtsad
