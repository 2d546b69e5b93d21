#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mpfedkd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seed for (base, tag, ...) so that per-client, per-round
// randomness does not depend on the order work is scheduled in.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(base);
    for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(base, tags));
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t data = 2;
inline constexpr std::uint64_t partition = 3;
inline constexpr std::uint64_t selection = 4;
inline constexpr std::uint64_t batches = 5;
inline constexpr std::uint64_t kmeans = 6;
inline constexpr std::uint64_t topology = 7;
}  // namespace stream

}  // namespace mpfedkd
