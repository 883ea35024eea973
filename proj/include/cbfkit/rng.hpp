#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cbfkit {

// 53-bit uniform in [0,1). Pinned explicitly (not std::uniform_real_distribution)
// so sampled datasets are reproducible across standard libraries.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

// Multiply-shift bounded draw; bias is O(2^-64), fine for shuffles.
inline std::uint64_t bounded(std::mt19937_64& g, std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(g()) * static_cast<__uint128_t>(n)) >> 64);
}

// Fisher-Yates, pinned for the same reason as uniform01.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(bounded(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

// splitmix64 step; used to derive independent seed streams from one run seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base ^ (salt * 0x9E3779B97F4A7C15ull);
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace cbfkit
