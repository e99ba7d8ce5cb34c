#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "drtsad/errors.hpp"
#include "drtsad/evaluation.hpp"
#include "drtsad/rng.hpp"

using namespace drtsad;

namespace {

// Brute-force oracles, deliberately written against the definitions rather
// than the implementation.

std::vector<std::uint8_t> oracle_adjust(const std::vector<std::uint8_t>& preds,
                                        const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> out = preds;
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 1) continue;
        std::size_t begin = i;
        while (begin > 0 && labels[begin - 1] == 1) --begin;
        std::size_t end = i;
        while (end + 1 < n && labels[end + 1] == 1) ++end;
        bool any = false;
        for (std::size_t t = begin; t <= end; ++t) any = any || preds[t] != 0;
        if (any) out[i] = 1;
    }
    return out;
}

struct OracleCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0;
};

OracleCounts oracle_tally(const std::vector<std::uint8_t>& preds,
                          const std::vector<std::uint8_t>& labels) {
    OracleCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        c.tp += preds[i] == 1 && labels[i] == 1;
        c.fp += preds[i] == 1 && labels[i] == 0;
        c.fn += preds[i] == 0 && labels[i] == 1;
    }
    return c;
}

double oracle_f1(const OracleCounts& c) {
    const double p = c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// Exhaustive sweep over every distinct score plus a flag-everything floor.
std::pair<double, double> oracle_best_threshold(const Vector& scores,
                                                const std::vector<std::uint8_t>& labels,
                                                bool adjusted) {
    Vector cands = scores;
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    cands.insert(cands.begin(), cands.front() - std::abs(cands.front()) * 1e-9 - 1e-12);
    double best_f1 = -1.0, best_thr = 0.0;
    for (double cand : cands) {
        std::vector<std::uint8_t> preds(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] > cand;
        if (adjusted) preds = oracle_adjust(preds, labels);
        const double f1 = oracle_f1(oracle_tally(preds, labels));
        if (f1 > best_f1) {
            best_f1 = f1;
            best_thr = cand;
        }
    }
    return {best_thr, best_f1};
}

}  // namespace

TEST_CASE("ratio policy flags the top fraction") {
    const Vector scores{1, 2, 3, 4};
    ThresholdPolicy policy;
    policy.kind = ThresholdPolicy::Kind::RatioPercentile;
    policy.ratio = 0.49999;  // top two of four
    const auto preds = apply_threshold(scores, policy);
    CHECK(preds == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("ratio policy on constant scores flags nothing") {
    const Vector scores(10, 2.5);
    ThresholdPolicy policy;
    policy.kind = ThresholdPolicy::Kind::RatioPercentile;
    policy.ratio = 0.1;
    const auto preds = apply_threshold(scores, policy);
    for (auto p : preds) CHECK(p == 0);
}

TEST_CASE("empty scores raise EmptyInput") {
    ThresholdPolicy policy;
    CHECK_THROWS_AS(apply_threshold({}, policy, nullptr), EmptyInput);
}

TEST_CASE("best-F1 sweep achieves 1 on separable scores") {
    const Vector scores{0.1, 0.2, 0.9, 0.95};
    const std::vector<std::uint8_t> labels{0, 0, 1, 1};
    ThresholdPolicy policy;
    policy.kind = ThresholdPolicy::Kind::BestF1Sweep;
    policy.grid_size = 16;
    const auto preds = apply_threshold(scores, policy, &labels);
    CHECK(prf(preds, labels).f1 == doctest::Approx(1.0));
}

TEST_CASE("point adjust extends a hit to its whole run and never clears") {
    const std::vector<std::uint8_t> labels{0, 1, 1, 0};
    const std::vector<std::uint8_t> preds{0, 1, 0, 0};
    CHECK(point_adjust(preds, labels) == std::vector<std::uint8_t>{0, 1, 1, 0});

    const std::vector<std::uint8_t> none(4, 0);
    CHECK(point_adjust(none, labels) == none);
}

TEST_CASE("prf basics") {
    const std::vector<std::uint8_t> labels{1, 0, 0, 0, 0, 0, 0, 0, 0, 1};
    std::vector<std::uint8_t> all(10, 1);
    const auto r = prf(all, labels);
    CHECK(r.precision == doctest::Approx(0.2));
    CHECK(r.recall == doctest::Approx(1.0));

    const auto perfect = prf(labels, labels);
    CHECK(perfect.precision == doctest::Approx(1.0));
    CHECK(perfect.recall == doctest::Approx(1.0));
    CHECK(perfect.f1 == doctest::Approx(1.0));
}

TEST_CASE("randomized oracle equivalence for adjust, tally and sweep") {
    RandomSource rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 50 + rng.next_below(150);
        Vector scores(n);
        std::vector<std::uint8_t> labels(n), preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Quantized scores create ties on purpose.
            scores[i] = double(rng.next_below(32)) / 4.0 + 0.25;
            labels[i] = rng.next_double() < 0.2;
            preds[i] = rng.next_double() < 0.3;
        }

        CHECK(point_adjust(preds, labels) == oracle_adjust(preds, labels));

        const auto mine = prf(preds, labels);
        const auto oracle = oracle_tally(preds, labels);
        CHECK(mine.tp == oracle.tp);
        CHECK(mine.fp == oracle.fp);
        CHECK(mine.fn == oracle.fn);

        ThresholdPolicy policy;
        policy.kind = ThresholdPolicy::Kind::BestF1Sweep;
        policy.grid_size = 256;  // above the distinct-score count: exact sweep
        double threshold = 0.0;
        auto swept = apply_threshold(scores, policy, &labels, true, &threshold);
        swept = point_adjust(swept, labels);
        const auto [oracle_thr, oracle_best] = oracle_best_threshold(scores, labels, true);
        CHECK(threshold == doctest::Approx(oracle_thr));
        CHECK(oracle_f1(oracle_tally(swept, labels)) == doctest::Approx(oracle_best));
    }
}

TEST_CASE("point adjust never decreases recall") {
    RandomSource rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 120;
        std::vector<std::uint8_t> labels(n), preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.next_double() < 0.25;
            preds[i] = rng.next_double() < 0.3;
        }
        const auto before = prf(preds, labels);
        const auto after = prf(point_adjust(preds, labels), labels);
        CHECK(after.recall >= before.recall);
    }
}

TEST_CASE("sweep F1 is invariant under strictly monotonic score transforms") {
    RandomSource rng(77);
    const std::size_t n = 150;
    Vector scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.next_double() * 4.0 + 0.5;
        labels[i] = rng.next_double() < 0.2;
    }
    Vector warped = scores;
    for (double& v : warped) v = std::exp(0.7 * v) + 3.0;

    ThresholdPolicy policy;
    policy.kind = ThresholdPolicy::Kind::BestF1Sweep;
    policy.grid_size = 1024;
    AnomalyScoreSeries a{scores, "x", ""}, b{warped, "x", ""};
    const auto ra = evaluate(a, labels, policy, true);
    const auto rb = evaluate(b, labels, policy, true);
    CHECK(ra.f1 == doctest::Approx(rb.f1));
}

TEST_CASE("evaluate composes threshold, adjustment and counting") {
    RandomSource rng(31);
    const std::size_t n = 300;
    Vector scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.next_double() < 0.15;
        scores[i] = labels[i] ? 1.0 + rng.next_double() : rng.next_double();
    }
    ThresholdPolicy policy;
    policy.kind = ThresholdPolicy::Kind::RatioPercentile;
    policy.ratio = 0.15;

    const AnomalyScoreSeries series{scores, "toy", "fp"};
    const auto report = evaluate(series, labels, policy, true);

    double threshold = 0.0;
    auto preds = apply_threshold(scores, policy, nullptr, true, &threshold);
    preds = point_adjust(preds, labels);
    const auto manual = prf(preds, labels);
    CHECK(report.tp == manual.tp);
    CHECK(report.fp == manual.fp);
    CHECK(report.fn == manual.fn);
    CHECK(report.threshold == doctest::Approx(threshold));
    CHECK(report.point_adjust);
}

TEST_CASE("metrics are invariant under joint permutation") {
    RandomSource rng(88);
    const std::size_t n = 200;
    std::vector<std::uint8_t> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.next_double() < 0.2;
        preds[i] = rng.next_double() < 0.25;
    }
    const auto base = prf(preds, labels);

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[rng.next_below(n)]);
    std::vector<std::uint8_t> pl(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
        pl[i] = labels[perm[i]];
        pp[i] = preds[perm[i]];
    }
    const auto shuffled = prf(pp, pl);
    CHECK(base.tp == shuffled.tp);
    CHECK(base.fp == shuffled.fp);
    CHECK(base.fn == shuffled.fn);
}
