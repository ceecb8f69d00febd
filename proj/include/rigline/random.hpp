#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace rigline {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to turn (seed, stream) pairs into independent seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix_seed(seed ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng{mix_seed(seed)}; }

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform index in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>{0, n - 1}(rng);
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

/// Fisher-Yates shuffle driven by uniform_index so results depend only on the engine.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

}  // namespace rigline
