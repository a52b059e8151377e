#pragma once
#include <cstdint>
#include <initializer_list>
#include <random>

namespace catefuse {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Mixes a base seed with stream indices (cell, replicate, stage, ...) into an
/// independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts)
{
    std::uint64_t h = detail::splitmix64(base);
    for (auto p : parts) {
        h = detail::splitmix64(h ^ detail::splitmix64(p + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Draw from Uniform(-hi, -lo) ∪ Uniform(lo, hi) with equal mass on each side.
inline double signed_uniform(Rng& rng, double lo, double hi)
{
    const double mag = uniform(rng, lo, hi);
    return std::bernoulli_distribution(0.5)(rng) ? mag : -mag;
}

inline double standard_normal(Rng& rng)
{
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

} // namespace catefuse
