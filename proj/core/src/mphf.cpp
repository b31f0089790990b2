#include "engram/mphf.hpp"

#include <algorithm>
#include <bit>

#include "engram/hashing.hpp"
#include "engram/rng.hpp"

namespace engram {

namespace {

constexpr std::uint16_t kMphfVersion = 1;
constexpr std::uint64_t kLevelMult = 0xff51afd7ed558ccdULL;
constexpr std::uint64_t kPseudoMult = 0xc4ceb9fe1a85ec53ULL;

}  // namespace

std::uint64_t Mphf::Level::rank(std::uint64_t pos) const {
    std::uint64_t r = rank_blocks[pos >> 9];
    std::uint64_t word = pos >> 6;
    for (std::uint64_t w = (pos >> 9) << 3; w < word; ++w)
        r += static_cast<std::uint64_t>(std::popcount(bits[w]));
    std::uint64_t tail = pos & 63;
    if (tail != 0)
        r += static_cast<std::uint64_t>(std::popcount(bits[word] & ((1ULL << tail) - 1)));
    return r;
}

void Mphf::Level::build_rank() {
    std::uint64_t n_blocks = (bitlen + 511) / 512;
    rank_blocks.assign(n_blocks, 0);
    std::uint64_t acc = 0;
    for (std::uint64_t b = 0; b < n_blocks; ++b) {
        rank_blocks[b] = acc;
        std::uint64_t word_end = std::min<std::uint64_t>((b + 1) << 3, bits.size());
        for (std::uint64_t w = b << 3; w < word_end; ++w)
            acc += static_cast<std::uint64_t>(std::popcount(bits[w]));
    }
}

std::uint64_t Mphf::position_in_level(const Level& level, const NgramKey& key) const {
    return mix64(key.tag(), level.seed, kLevelMult) % level.bitlen;
}

Mphf Mphf::build(std::span<const NgramKey> keys, double gamma, int max_levels,
                 std::uint64_t seed, std::uint64_t fallback_budget) {
    if (gamma < 1.0) throw InputError("mphf: gamma must be >= 1.0");
    if (max_levels < 1) throw InputError("mphf: max_levels must be >= 1");

    Mphf m;
    m.n_keys_ = keys.size();
    m.gamma_ = gamma;
    m.seed_ = seed;
    if (keys.empty()) return m;

    // Verify distinctness up front; a duplicate would make bijectivity
    // impossible and the failure mode (endless level recursion) is opaque.
    {
        std::vector<std::uint64_t> tags(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) tags[i] = keys[i].tag();
        std::sort(tags.begin(), tags.end());
        auto dup = std::adjacent_find(tags.begin(), tags.end());
        if (dup != tags.end())
            throw InputError("mphf: duplicate key with tag 0x" +
                             [](std::uint64_t v) {
                                 char buf[17];
                                 static const char* hex = "0123456789abcdef";
                                 for (int i = 15; i >= 0; --i, v >>= 4) buf[i] = hex[v & 15];
                                 buf[16] = '\0';
                                 return std::string(buf);
                             }(*dup));
    }

    std::uint64_t seed_stream = seed;
    std::vector<NgramKey> remaining(keys.begin(), keys.end());
    std::uint64_t index_base = 0;

    for (int level_idx = 0; level_idx < max_levels && !remaining.empty(); ++level_idx) {
        Level level;
        level.seed = splitmix64(seed_stream);
        level.bitlen = std::max<std::uint64_t>(
            64, static_cast<std::uint64_t>(gamma * static_cast<double>(remaining.size())));
        std::uint64_t n_words = (level.bitlen + 63) / 64;
        level.bits.assign(n_words, 0);

        std::vector<std::uint64_t> seen(n_words, 0), collided(n_words, 0);
        for (const NgramKey& key : remaining) {
            std::uint64_t pos = m.position_in_level(level, key);
            std::uint64_t w = pos >> 6, b = 1ULL << (pos & 63);
            if (seen[w] & b)
                collided[w] |= b;
            else
                seen[w] |= b;
        }
        for (std::uint64_t w = 0; w < n_words; ++w) level.bits[w] = seen[w] & ~collided[w];

        std::vector<NgramKey> next;
        for (const NgramKey& key : remaining) {
            std::uint64_t pos = m.position_in_level(level, key);
            if (!((collided[pos >> 6] >> (pos & 63)) & 1ULL)) continue;
            next.push_back(key);
        }
        level.keys_assigned = remaining.size() - next.size();
        level.build_rank();
        m.levels_.push_back(std::move(level));
        remaining.swap(next);
        index_base += m.levels_.back().keys_assigned;
    }

    if (remaining.size() > fallback_budget)
        throw InvariantError("mphf: " + std::to_string(remaining.size()) +
                             " keys left after " + std::to_string(max_levels) +
                             " levels exceeds fallback budget of " +
                             std::to_string(fallback_budget));

    std::sort(remaining.begin(), remaining.end());
    m.fallback_.reserve(remaining.size());
    for (std::size_t i = 0; i < remaining.size(); ++i)
        m.fallback_.emplace_back(remaining[i].tag(), index_base + i);
    std::sort(m.fallback_.begin(), m.fallback_.end());

    // Exhaustive post-build verification: the query values over the
    // construction set must be a permutation of [0, n).
    std::vector<std::uint64_t> occupancy((keys.size() + 63) / 64, 0);
    for (const NgramKey& key : keys) {
        std::uint64_t idx = m.query(key);
        if (idx >= m.n_keys_)
            throw InvariantError("mphf: query out of range during verification");
        std::uint64_t w = idx >> 6, b = 1ULL << (idx & 63);
        if (occupancy[w] & b)
            throw InvariantError("mphf: bijectivity violated at index " +
                                 std::to_string(idx));
        occupancy[w] |= b;
    }
    return m;
}

std::uint64_t Mphf::query(const NgramKey& key) const {
    if (empty()) throw StateError("mphf: query on empty structure");
    std::uint64_t offset = 0;
    for (const Level& level : levels_) {
        std::uint64_t pos = position_in_level(level, key);
        if (level.test(pos)) return offset + level.rank(pos);
        offset += level.keys_assigned;
    }
    std::uint64_t tag = key.tag();
    auto it = std::lower_bound(fallback_.begin(), fallback_.end(),
                               std::make_pair(tag, std::uint64_t{0}));
    if (it != fallback_.end() && it->first == tag) return it->second;
    // Non-member that escaped every level: deterministic pseudo-index.
    return mix64(tag, seed_ ^ 0x70736575ULL, kPseudoMult) % n_keys_;
}

Mphf::Stats Mphf::stats() const {
    Stats s;
    s.n_keys = n_keys_;
    s.levels_used = static_cast<int>(levels_.size());
    s.fallback_keys = fallback_.size();
    for (const Level& level : levels_)
        s.structure_bits += 64 * (level.bits.size() + level.rank_blocks.size());
    s.structure_bits += 128 * fallback_.size();
    s.bits_per_key = n_keys_ == 0 ? 0.0
                                  : static_cast<double>(s.structure_bits) /
                                        static_cast<double>(n_keys_);
    return s;
}

// ---------------------------------------------------------------------------
// File: magic "ENPH", version u16, n_keys u64, gamma f64, level count u8, per
// level (seed u64, bitlen u64, bits, rank blocks), fallback entries.

void Mphf::serialize(BinaryWriter& w) const {
    w.magic("ENPH");
    w.u16(kMphfVersion);
    w.u64(n_keys_);
    w.f64(gamma_);
    w.u64(seed_);
    w.u8(static_cast<std::uint8_t>(levels_.size()));
    for (const Level& level : levels_) {
        w.u64(level.seed);
        w.u64(level.bitlen);
        w.u64(level.keys_assigned);
        for (std::uint64_t word : level.bits) w.u64(word);
        for (std::uint64_t block : level.rank_blocks) w.u64(block);
    }
    w.u32(static_cast<std::uint32_t>(fallback_.size()));
    for (const auto& [tag, index] : fallback_) {
        w.u64(tag);
        w.u64(index);
    }
}

Mphf Mphf::deserialize(BinaryReader& r) {
    r.expect_magic("ENPH");
    std::uint16_t version = r.u16();
    if (version != kMphfVersion)
        throw FormatError("unsupported ENPH version " + std::to_string(version));
    Mphf m;
    m.n_keys_ = r.u64();
    m.gamma_ = r.f64();
    m.seed_ = r.u64();
    std::uint8_t n_levels = r.u8();
    m.levels_.resize(n_levels);
    for (Level& level : m.levels_) {
        level.seed = r.u64();
        level.bitlen = r.u64();
        level.keys_assigned = r.u64();
        std::uint64_t n_words = (level.bitlen + 63) / 64;
        std::uint64_t n_blocks = (level.bitlen + 511) / 512;
        level.bits.resize(n_words);
        for (std::uint64_t& word : level.bits) word = r.u64();
        level.rank_blocks.resize(n_blocks);
        for (std::uint64_t& block : level.rank_blocks) block = r.u64();
    }
    std::uint32_t n_fallback = r.u32();
    m.fallback_.resize(n_fallback);
    for (auto& [tag, index] : m.fallback_) {
        tag = r.u64();
        index = r.u64();
    }
    return m;
}

void Mphf::save(const std::filesystem::path& path) const {
    BinaryWriter w;
    serialize(w);
    write_file(path, w.buffer());
}

Mphf Mphf::load(const std::filesystem::path& path) {
    auto raw = read_file(path);
    BinaryReader r(raw);
    return deserialize(r);
}

}  // namespace engram
