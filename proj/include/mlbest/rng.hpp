#pragma once

#include <cstdint>
#include <initializer_list>

namespace mlbest {

/// SplitMix64 finalizer; a bijective avalanche mix of a 64-bit word.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds stream coordinates into a base seed. The result depends only on the
/// values, never on which thread asks, so Monte-Carlo trials can be scheduled
/// in any order.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    return derive_seed(base, {stream});
}

}  // namespace mlbest
