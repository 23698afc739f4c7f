#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace topofault::rng {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Used to decorrelate derived seeds.
constexpr uint64_t mix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a over a purpose tag; stable across platforms, unlike std::hash.
constexpr uint64_t tag_hash(std::string_view tag) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Every random stream in the toolkit comes from here: root ^ tag ^ index, then mixed.
constexpr uint64_t derive(uint64_t root, std::string_view tag, uint64_t index = 0) {
    return mix(root ^ tag_hash(tag) ^ mix(index));
}

inline Engine make_engine(uint64_t root, std::string_view tag, uint64_t index = 0) {
    return Engine(derive(root, tag, index));
}

/// Uniform double in [0,1) from the top 53 bits; std::uniform_real_distribution is
/// implementation-defined and would break cross-platform byte-identical datasets.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(eng);
}

/// Unbiased integer in [0, n).
inline uint64_t uniform_index(Engine& eng, uint64_t n) {
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
    uint64_t v;
    do {
        v = eng();
    } while (v >= limit);
    return v % n;
}

/// Standard normal via Box-Muller (deterministic across standard libraries).
inline double normal(Engine& eng) {
    double u1;
    do {
        u1 = uniform01(eng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace topofault::rng
