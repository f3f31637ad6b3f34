#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ssgd/errors.hpp"

namespace ssgd {

namespace detail {

// SplitMix64 output finalizer (Steele, Lea & Flood 2014).
inline std::uint64_t splitmix64_fin(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// MurmurHash3 fmix64, used only to derive child-stream seeds so that a
// split stream never reproduces its parent's outputs.
inline std::uint64_t fmix64(std::uint64_t z) {
    z ^= z >> 33;
    z *= 0xFF51AFD7ED558CCDULL;
    z ^= z >> 33;
    z *= 0xC4CEB9FE1A85EC53ULL;
    return z ^ (z >> 33);
}

} // namespace detail

/// Deterministic, splittable random source.
///
/// The generator is the SplitMix64 counter construction: draw i of stream
/// (seed, counter) is splitmix64_fin(seed + (counter + i) * GOLDEN_GAMMA).
/// The full state is exactly the (seed, counter) pair, so identical pairs
/// replay bit-identical u64/uniform sequences on any platform. Gaussian
/// draws apply Box-Muller on top and are bit-stable for a fixed libm.
class RngState {
public:
    static constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

    explicit RngState(std::uint64_t seed = 0, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return detail::splitmix64_fin(seed_ + counter_ * kGoldenGamma);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// One standard-normal draw. Consumes a full Box-Muller pair (two u64)
    /// and discards the second value, so consumption per call is fixed.
    double next_gaussian() {
        double z0, z1;
        gaussian_pair(z0, z1);
        return z0;
    }

    /// Box-Muller pair of independent standard normals.
    void gaussian_pair(double& z0, double& z1) {
        // 1 - u keeps the log argument in (0, 1]; u2 in [0, 1).
        const double u1 = 1.0 - next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        z0 = r * std::cos(theta);
        z1 = r * std::sin(theta);
    }

    /// Derives an independent child stream and advances this one by one draw.
    RngState split() {
        return RngState(detail::fmix64(next_u64()), 0);
    }

    bool operator==(const RngState&) const = default;

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Fresh generator for the given seed; draws are reproducible byte-for-byte.
inline RngState seeded_rng(std::uint64_t seed) { return RngState(seed, 0); }

} // namespace ssgd
