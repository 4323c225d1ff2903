#ifndef RAREUNET_HASH_HPP
#define RAREUNET_HASH_HPP

#include <cstdint>
#include <string_view>

namespace rareunet {

// 64-bit FNV-1a.
constexpr uint64_t hash_string(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// splitmix64 finalizer over the mixed pair; used to derive independent seeds.
constexpr uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace rareunet

#endif  // RAREUNET_HASH_HPP
