#pragma once

#include <cmath>
#include <cstdint>

namespace mlfm {

/// Counter-based 64-bit generator (SplitMix64 finalizer over an affine
/// counter). Output i of stream t under seed x is
///   mix64(mix64(x) ^ mix64(t * PHI) + (i+1) * PHI),
/// so streams are independent and any draw is reproducible from
/// (seed, stream, counter) alone. Streams used by the synthetic generator:
/// kModelStream for factor/diagonal coefficients, kSampleStream ^ sample seed
/// for dataset draws.
class CounterRng {
public:
    static constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;    // "model"
    static constexpr std::uint64_t kSampleStream = 0x73616d706cULL;   // "sampl"

    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : base_(mix64(mix64(seed) ^ mix64(stream * kPhi))) {}

    std::uint64_t next_u64() { return mix64(base_ + (++counter_) * kPhi); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    static constexpr std::uint64_t kPhi = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix64(std::uint64_t z) {
        z += kPhi;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t base_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mlfm
