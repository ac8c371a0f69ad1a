#pragma once

// Deterministic RNG used everywhere randomness appears: cohort splits,
// weight init, dropout masks, batch shuffling. SplitMix64 is tiny, has a
// one-word state that can be derived per (purpose, seed, ...) tuple, and its
// output sequence is a published constant we can pin in tests.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace ecgfreq {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : x_(seed) {}

    std::uint64_t next() {
        x_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = x_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53 mantissa bits, same recipe as xoshiro's double.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box–Muller (one value per call; the sibling is
    // discarded to keep consumption counts easy to reason about).
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t x_;
};

// Fisher–Yates with descending index and modulo draw. The exact draw rule
// (j = next() % (i + 1)) is part of the split-reproducibility contract, so
// it must not be swapped for std::shuffle or a rejection sampler.
template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next() % static_cast<std::uint64_t>(i));
        std::swap(v[i - 1], v[j]);
    }
}

// Stable sub-seed derivation so independent consumers (per fold / per layer)
// never share a stream. FNV-1a over the tag mixed with the base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ULL ^ base;
    for (char c : tag) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t extra) {
    std::uint64_t h = derive_seed(base, tag);
    h ^= extra + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    return h;
}

} // namespace ecgfreq
