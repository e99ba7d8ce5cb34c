#pragma once

#include <array>
#include <cstdint>

#include "drtsad/matrix.hpp"

namespace drtsad {

/// Deterministic random source: xoshiro256++ seeded through splitmix64.
///
/// The unsigned 64-bit stream is bit-identical for a given seed on every
/// platform. A source is single-owner; derive independent child streams
/// with fork() instead of sharing one instance.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double();

    /// Standard normal via Box-Muller (one spare cached).
    double next_normal();
    double next_normal(double mean, double stddev);

    /// Uniform integer in [0, bound), rejection-sampled (unbiased).
    std::uint64_t next_below(std::uint64_t bound);

    /// Child source derived purely from (seed, stream); does not advance this one.
    RandomSource fork(std::uint64_t stream) const;

    void fill_normal(Matrix& m, double mean, double stddev);
    void fill_normal(std::span<double> v, double mean, double stddev);

private:
    std::uint64_t seed_ = 0;
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace drtsad
