#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "engram/io.hpp"
#include "engram/ngram.hpp"

namespace engram {

// Minimal perfect hash over a static key set: a bijection keys -> [0, n).
//
// Construction cascades bitmap levels. Each remaining key is hashed into a
// gamma*m-bit level; keys that land alone get their bit set and are assigned
// the rank of that bit, colliding keys recurse into the next level. Keys
// still unplaced after max_levels go to a small sorted-array fallback.
// Queries on non-member keys return a deterministic pseudo-index in [0, n)
// without error; callers that need membership pair the query with a
// fingerprint test.
class Mphf {
public:
    struct Stats {
        std::uint64_t n_keys = 0;
        int levels_used = 0;
        std::uint64_t fallback_keys = 0;
        std::uint64_t structure_bits = 0;  // bit vectors + rank blocks + fallback
        double bits_per_key = 0.0;
    };

    Mphf() = default;

    // keys must be distinct; gamma >= 1.0. Bijectivity is verified
    // exhaustively before returning. Deterministic given (keys, gamma, seed).
    static Mphf build(std::span<const NgramKey> keys, double gamma, int max_levels,
                      std::uint64_t seed, std::uint64_t fallback_budget = 64);

    // Member keys map to their unique index; non-members to an arbitrary but
    // deterministic in-range index. Throws StateError when empty.
    std::uint64_t query(const NgramKey& key) const;

    std::uint64_t size() const { return n_keys_; }
    bool empty() const { return n_keys_ == 0; }
    double gamma() const { return gamma_; }
    Stats stats() const;

    void serialize(BinaryWriter& w) const;
    static Mphf deserialize(BinaryReader& r);
    void save(const std::filesystem::path& path) const;
    static Mphf load(const std::filesystem::path& path);

private:
    struct Level {
        std::uint64_t seed = 0;
        std::uint64_t bitlen = 0;
        std::vector<std::uint64_t> bits;
        std::vector<std::uint64_t> rank_blocks;  // absolute rank per 512-bit block
        std::uint64_t keys_assigned = 0;

        bool test(std::uint64_t pos) const {
            return (bits[pos >> 6] >> (pos & 63)) & 1ULL;
        }
        std::uint64_t rank(std::uint64_t pos) const;  // set bits strictly before pos
        void build_rank();
    };

    std::uint64_t position_in_level(const Level& level, const NgramKey& key) const;

    std::uint64_t n_keys_ = 0;
    double gamma_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<Level> levels_;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> fallback_;  // (tag, index), sorted
};

}  // namespace engram
