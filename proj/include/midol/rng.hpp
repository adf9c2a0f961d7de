#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace midol {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent child seed for `stream` under `seed`. Adding a new stream id
/// never changes the seeds handed to existing ones.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t stream_id(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    return derive_seed(seed, stream_id(stream));
}

using Rng = std::mt19937_64;

}  // namespace midol
