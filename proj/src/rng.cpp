#include "drtsad/rng.hpp"

#include <cmath>
#include <numbers>

namespace drtsad {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t RandomSource::next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RandomSource::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomSource::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // 1 - u lies in (0, 1], keeping the log argument positive.
    const double u = next_double();
    const double v = next_double();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u));
    const double theta = 2.0 * std::numbers::pi * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double RandomSource::next_normal(double mean, double stddev) {
    return mean + stddev * next_normal();
}

std::uint64_t RandomSource::next_below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

RandomSource RandomSource::fork(std::uint64_t stream) const {
    std::uint64_t mix = seed_ ^ (0xA5A5A5A55A5A5A5AULL + stream * 0x9E3779B97F4A7C15ULL);
    return RandomSource(splitmix64(mix));
}

void RandomSource::fill_normal(Matrix& m, double mean, double stddev) {
    fill_normal(std::span<double>(m.data()), mean, stddev);
}

void RandomSource::fill_normal(std::span<double> v, double mean, double stddev) {
    for (double& x : v) x = next_normal(mean, stddev);
}

}  // namespace drtsad
