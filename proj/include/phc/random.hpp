#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace phc {

/// SplitMix64 finaliser; a bijective mixer on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a list of integers into one key (order-sensitive).
constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t key = 0x6a09e667f3bcc909ULL;
    for (auto p : parts) key = mix64(key ^ mix64(p));
    return key;
}

/// Stateless generator: the i-th draw under a key depends only on (key, i),
/// so results do not depend on the order in which draws are requested.
class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

    constexpr std::uint64_t bits(std::uint64_t counter) const {
        return mix64(key_ ^ mix64(counter + 0x632be59bd9b4e019ULL));
    }

    /// Uniform on the open interval (0, 1).
    constexpr double unit_open(std::uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform on the open interval (lo, hi).
    constexpr double uniform(std::uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * unit_open(counter);
    }

private:
    std::uint64_t key_;
};

/// Sequential engine used for Gaussian initialisation, dropout masks and
/// shuffling. Seeded from a derived key so independent streams do not overlap.
using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(derive_key(parts)); }

} // namespace phc
