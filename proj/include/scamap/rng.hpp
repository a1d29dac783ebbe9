/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace scamap {

// All randomness in the toolkit flows through this generator. The standard
// library's distributions are implementation-defined, so uniform/normal
// sampling is spelled out here: same seed => same bytes, on any platform.

/// SplitMix64 generator (Steele, Lea, Flood 2014).
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 bits of precision.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Unbiased integer in [0, n). Lemire's method with rejection.
    std::uint64_t next_below(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    std::uint8_t next_byte() { return static_cast<std::uint8_t>(next_u64() >> 56); }

    /// Standard normal via Box-Muller; draws a pair and caches the second.
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        // u1 in (0,1] so log stays finite.
        double u1 = 1.0 - next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

  private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

/// 64-bit avalanche mix (MurmurHash3 finalizer).
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
    z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
    return z ^ (z >> 33);
}

/// Seed for an independent substream, e.g. one per trace or per byte.
/// Different (seed, tag) pairs give decorrelated generators.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t tag) {
    return mix64(seed ^ mix64(tag + 0x632BE59BD9B4E019ULL));
}

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::uint32_t> random_permutation(std::uint32_t n, SplitMix64 &rng) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i)
        p[i] = i;
    for (std::uint32_t i = n; i > 1; --i) {
        auto j = static_cast<std::uint32_t>(rng.next_below(i));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

} // namespace scamap
