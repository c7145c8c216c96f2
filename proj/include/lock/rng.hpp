/// @file rng.hpp Counter-based random number generator used by every data
/// generator and experiment so that runs are reproducible from a 64-bit seed.
///
/// The stream is a pure function of (seed, counter) and is simple enough to
/// reimplement elsewhere when outputs must be matched bit for bit:
///
///   value(seed, i) = splitmix64_mix(seed + i * 0x9E3779B97F4A7C15), i >= 1
///   uniform(i)     = (value >> 11) * 2^-53                       in [0, 1)
///   normal(j)      = sqrt(-2 ln(1 - u_{2j})) * cos(2 pi u_{2j+1})
///
/// Every normal draw consumes exactly two uniforms (the sine branch of
/// Box-Muller is discarded), so draw positions stay aligned with the counter.

#pragma once

#include <cmath>
#include <cstdint>

namespace lock {

namespace detail {
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace detail

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        ++counter_;
        return detail::splitmix64_mix(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

/// Decorrelated child seed for a named sub-stream (system noise vs
/// observation noise, per-seed experiment streams, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return detail::splitmix64_mix(seed ^ detail::splitmix64_mix(stream + 0x632BE59BD9B4E019ull));
}

}  // namespace lock
