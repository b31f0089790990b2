#pragma once

#include <cstdint>
#include <vector>

#include "engram/errors.hpp"
#include "engram/ngram.hpp"
#include "engram/rng.hpp"

namespace engram {

// Two rounds of xor-shift + odd multiply (splitmix-style finalizer). All
// hashing in the artifact funnels through this one mixer; streams differ only
// in (seed, multiplier).
inline std::uint64_t mix64(std::uint64_t x, std::uint64_t seed, std::uint64_t odd_mult) {
    x ^= seed;
    x ^= x >> 30;
    x *= odd_mult;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// One deterministic hash head per (order, head) pair for cold-tier indexing.
// Seeds and multipliers are derived from a single family seed and recorded in
// the run config, so indices are reproducible forever.
class HashHeadFamily {
public:
    HashHeadFamily() = default;

    static HashHeadFamily derive(std::uint64_t family_seed, int max_order, int heads) {
        HashHeadFamily f;
        f.family_seed_ = family_seed;
        f.heads_ = heads;
        std::uint64_t stream = mix_seed(family_seed, 0x68656164u /* head stream */);
        f.seeds_.resize(static_cast<std::size_t>(max_order + 1) * heads);
        f.mults_.resize(f.seeds_.size());
        for (std::size_t i = 0; i < f.seeds_.size(); ++i) {
            f.seeds_[i] = splitmix64(stream);
            f.mults_[i] = splitmix64(stream) | 1ULL;  // multipliers must be odd
        }
        return f;
    }

    std::uint64_t family_seed() const { return family_seed_; }
    int heads() const { return heads_; }

    std::uint64_t head_index(const NgramKey& key, int head, std::uint64_t table_size) const {
        if (table_size < 1) throw InputError("head_index: table size must be >= 1");
        std::size_t slot = static_cast<std::size_t>(key.order) * heads_ + head;
        return mix64(key.tag(), seeds_.at(slot), mults_.at(slot)) % table_size;
    }

private:
    std::uint64_t family_seed_ = 0;
    int heads_ = 0;
    std::vector<std::uint64_t> seeds_;
    std::vector<std::uint64_t> mults_;
};

// 32-bit membership fingerprint. The seed space is disjoint from every hash
// head (separate stream constant), so changing it never moves a cold index.
inline std::uint32_t fingerprint(const NgramKey& key, std::uint64_t fp_seed) {
    std::uint64_t s = mix_seed(fp_seed, 0x66707262u /* fp stream */);
    return static_cast<std::uint32_t>(mix64(key.tag(), s, 0xbf58476d1ce4e5b9ULL) >> 32);
}

// Smallest prime >= n (n >= 1). Cold table slot counts are rounded up to a
// prime; configurations keep the round nominal number.
inline std::uint64_t next_prime_at_or_above(std::uint64_t n) {
    if (n < 2) return 2;
    auto is_prime = [](std::uint64_t v) {
        if (v % 2 == 0) return v == 2;
        for (std::uint64_t d = 3; d * d <= v; d += 2)
            if (v % d == 0) return false;
        return true;
    };
    while (!is_prime(n)) ++n;
    return n;
}

}  // namespace engram
