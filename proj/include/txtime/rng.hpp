#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace txtime {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t label_hash(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for unit `index` of stage `label`, derived from the master seed.
/// Every random stream in the pipeline goes through here so results do not
/// depend on scheduling or thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ label_hash(label)) + index);
}

inline Rng make_rng(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(master, label, index));
}

// Uniform draws built on raw engine output; the std distributions are
// implementation-defined and would tie artifacts to one standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

double standard_normal(Rng& rng);

inline double exponential(Rng& rng, double mean) {
    double u;
    do {
        u = uniform01(rng);
    } while (u <= 0.0);
    return -mean * std::log(u);
}

}  // namespace txtime
