// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace histost {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// 64-bit FNV-1a over a byte string.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Counter-based seed derivation: every consumer of randomness gets its own
/// stream from (master seed, purpose label, counter). Streams for different
/// purposes or counters never share state, so adding a consumer does not shift
/// any other stream.
///
///   derived = mix64(mix64(master ^ fnv1a64(purpose)) + counter)
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                    std::uint64_t counter = 0) {
    return mix64(mix64(master ^ fnv1a64(purpose)) + counter);
}

inline Rng make_rng(std::uint64_t master, std::string_view purpose, std::uint64_t counter = 0) {
    return Rng(derive_seed(master, purpose, counter));
}

/// Uniform integer in [0, n) without the libstdc++ distribution's
/// implementation-defined rejection scheme.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = rng();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = rng();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller (no cached second value, so the stream
/// position depends only on the number of draws).
double standard_normal(Rng& rng);

/// Poisson draw; inversion for small means, PTRS transformed rejection otherwise.
std::uint64_t poisson(Rng& rng, double mean);

/// Fisher-Yates shuffle driven by uniform_index.
template <class It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = uniform_index(rng, i);
        std::iter_swap(first + (i - 1), first + j);
    }
}

}  // namespace histost
