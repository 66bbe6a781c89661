#pragma once

#include <cstdint>
#include <random>

namespace peval {

// splitmix64 finalizer; good avalanche, used only to spread seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
    s = splitmix64(s ^ splitmix64(a));
    s = splitmix64(s ^ splitmix64(b ^ 0x13198a2e03707344ULL));
    s = splitmix64(s ^ splitmix64(c ^ 0xa4093822299f31d0ULL));
    return s;
}

// Stream for one path. Depends only on (seed, path index, extra tags), never on
// path count or worker layout, so every path draws identical numbers no matter
// how the work is chunked.
inline std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t path,
                                   std::uint64_t tag0 = 0, std::uint64_t tag1 = 0) {
    return std::mt19937_64(mix_seed(seed, path, tag0, tag1));
}

} // namespace peval
