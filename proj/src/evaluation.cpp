#include "drtsad/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "drtsad/errors.hpp"

namespace drtsad {

namespace {

std::vector<std::uint8_t> predict_above(const Vector& scores, double threshold) {
    std::vector<std::uint8_t> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] > threshold ? 1 : 0;
    return preds;
}

double f1_at(const Vector& scores, const std::vector<std::uint8_t>& labels, double threshold,
             bool adjusted) {
    auto preds = predict_above(scores, threshold);
    if (adjusted) preds = point_adjust(preds, labels);
    return prf(preds, labels).f1;
}

}  // namespace

std::vector<std::uint8_t> apply_threshold(const Vector& scores, const ThresholdPolicy& policy,
                                          const std::vector<std::uint8_t>* labels,
                                          bool adjust_for_sweep, double* chosen_threshold) {
    if (scores.empty()) throw EmptyInput("apply_threshold: empty score series");

    double threshold = 0.0;
    if (policy.kind == ThresholdPolicy::Kind::RatioPercentile) {
        if (!(policy.ratio > 0.0 && policy.ratio < 0.5))
            throw PreconditionViolation("apply_threshold: ratio must lie in (0, 0.5)");
        Vector sorted = scores;
        std::sort(sorted.begin(), sorted.end());
        // Nearest-rank (1 - r) quantile; strict > leaves constant series unflagged.
        const double p = 1.0 - policy.ratio;
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(p * static_cast<double>(sorted.size())));
        rank = std::clamp<std::size_t>(rank, 1, sorted.size());
        threshold = sorted[rank - 1];
    } else {
        if (labels == nullptr)
            throw PreconditionViolation("apply_threshold: best_f1_sweep needs labels");
        if (labels->size() != scores.size())
            throw DimensionMismatch("apply_threshold: labels length != scores length");
        if (policy.grid_size < 10)
            throw PreconditionViolation("apply_threshold: sweep grid size must be >= 10");

        Vector candidates = scores;
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        if (candidates.size() > policy.grid_size) {
            const double lo = std::max(candidates.front(), 1e-300);
            const double hi = candidates.back();
            Vector grid(policy.grid_size);
            const double log_lo = std::log(lo), log_hi = std::log(std::max(hi, lo * (1 + 1e-12)));
            for (std::size_t i = 0; i < policy.grid_size; ++i) {
                const double frac = static_cast<double>(i) /
                                    static_cast<double>(policy.grid_size - 1);
                grid[i] = std::exp(log_lo + frac * (log_hi - log_lo));
            }
            candidates = std::move(grid);
        }
        // Predicting above the max flags nothing; predicting above a value just
        // below the min flags everything. Include both extremes.
        candidates.insert(candidates.begin(),
                          candidates.front() - std::abs(candidates.front()) * 1e-9 - 1e-12);

        double best_f1 = -1.0;
        for (const double cand : candidates) {
            const double f1 = f1_at(scores, *labels, cand, adjust_for_sweep);
            if (f1 > best_f1) {  // strict > keeps the lowest threshold on ties
                best_f1 = f1;
                threshold = cand;
            }
        }
    }

    if (chosen_threshold != nullptr) *chosen_threshold = threshold;
    return predict_above(scores, threshold);
}

std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& predictions,
                                       const std::vector<std::uint8_t>& labels) {
    if (predictions.size() != labels.size())
        throw DimensionMismatch("point_adjust: length mismatch");
    std::vector<std::uint8_t> adjusted = predictions;
    const std::size_t n = labels.size();
    std::size_t i = 0;
    while (i < n) {
        if (labels[i] == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && labels[j] == 1) ++j;
        bool hit = false;
        for (std::size_t t = i; t < j && !hit; ++t) hit = predictions[t] != 0;
        if (hit)
            for (std::size_t t = i; t < j; ++t) adjusted[t] = 1;
        i = j;
    }
    return adjusted;
}

EvalReport prf(const std::vector<std::uint8_t>& predictions,
               const std::vector<std::uint8_t>& labels) {
    if (predictions.size() != labels.size()) throw DimensionMismatch("prf: length mismatch");
    EvalReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] && labels[i])
            ++r.tp;
        else if (predictions[i] && !labels[i])
            ++r.fp;
        else if (!predictions[i] && labels[i])
            ++r.fn;
    }
    r.precision = (r.tp + r.fp) > 0 ? double(r.tp) / double(r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? double(r.tp) / double(r.tp + r.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

EvalReport evaluate(const AnomalyScoreSeries& scores, const std::vector<std::uint8_t>& labels,
                    const ThresholdPolicy& policy, bool adjust) {
    if (scores.scores.size() != labels.size())
        throw DimensionMismatch("evaluate: scores length != labels length");

    double threshold = 0.0;
    auto preds = apply_threshold(scores.scores, policy, &labels, adjust, &threshold);
    if (adjust) preds = point_adjust(preds, labels);

    EvalReport report = prf(preds, labels);
    report.threshold = threshold;
    report.point_adjust = adjust;
    report.policy = policy.kind == ThresholdPolicy::Kind::RatioPercentile
                        ? "ratio_percentile(" + std::to_string(policy.ratio) + ")"
                        : "best_f1_sweep(" + std::to_string(policy.grid_size) + ")";
    return report;
}

}  // namespace drtsad
