#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "engram/errors.hpp"

namespace engram {

// Canonical ids occupy 20 bits each so a suffix n-gram of order <= 3 packs
// into a single 64-bit word. The top 4 bits of the packed word stay zero and
// are reused by tag() to fold the order into one hashable identity.
inline constexpr std::uint32_t kCanonicalIdBits = 20;
inline constexpr std::uint32_t kMaxCanonicalIds = 1u << kCanonicalIdBits;
inline constexpr std::uint32_t kDocSeparator = 0xFFFFFFFFu;
inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 3;

// A canonicalized suffix n-gram of order 2 or 3. The most recent token sits
// in the lowest 20-bit field. Identity is (order, packed): keys of different
// orders never compare equal even when the packed words coincide.
struct NgramKey {
    std::uint8_t order = 0;
    std::uint64_t packed = 0;

    // ids ordered oldest -> newest, i.e. ids.back() is the current token.
    static NgramKey pack(std::span<const std::uint32_t> ids) {
        NgramKey k;
        k.order = static_cast<std::uint8_t>(ids.size());
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (ids[j] >= kMaxCanonicalIds)
                throw InputError("canonical id exceeds 20-bit packing capacity");
            // newest token -> lowest field
            k.packed |= static_cast<std::uint64_t>(ids[ids.size() - 1 - j])
                        << (kCanonicalIdBits * j);
        }
        return k;
    }

    std::vector<std::uint32_t> unpack() const {
        std::vector<std::uint32_t> ids(order);
        for (int j = 0; j < order; ++j) {
            ids[order - 1 - j] = static_cast<std::uint32_t>(
                (packed >> (kCanonicalIdBits * j)) & (kMaxCanonicalIds - 1));
        }
        return ids;
    }

    // Single hashable word carrying both order and contents.
    std::uint64_t tag() const {
        return packed | (static_cast<std::uint64_t>(order) << 60);
    }

    friend bool operator==(const NgramKey& a, const NgramKey& b) {
        return a.order == b.order && a.packed == b.packed;
    }
    friend auto operator<=>(const NgramKey& a, const NgramKey& b) = default;
};

enum class CanonicalRule {
    identity,
    lowercase,          // ASCII lowercasing of the token string
    strip_whitespace,   // drop ASCII whitespace; all-whitespace tokens collapse
};

CanonicalRule parse_canonical_rule(const std::string& name);
std::string canonical_rule_name(CanonicalRule rule);

// Total map token_id -> canonical_id. Built once from a vocabulary and a rule
// list; applied exactly once per pipeline run.
struct CanonicalMap {
    std::vector<std::uint32_t> entries;  // indexed by token_id
    std::uint32_t canonical_size = 0;

    std::uint32_t vocab_size() const { return static_cast<std::uint32_t>(entries.size()); }

    static CanonicalMap identity(std::uint32_t vocab_size);

    // Canonical ids are assigned in first-appearance order over token ids, so
    // the map is a pure function of (vocab, rules).
    static CanonicalMap build(std::span<const std::string> vocab,
                              std::span<const CanonicalRule> rules);
};

std::vector<std::uint32_t> canonicalize(std::span<const std::uint32_t> tokens,
                                        const CanonicalMap& map);

// Per-order, per-position suffix n-gram keys for one document. keys[oi][t] is
// absent when t < order-1.
struct PositionKeys {
    std::vector<int> orders;
    std::vector<std::vector<std::optional<NgramKey>>> keys;  // [order_index][position]

    const std::optional<NgramKey>& at(std::size_t order_index, std::size_t pos) const {
        return keys[order_index][pos];
    }
};

PositionKeys extract_suffix_ngrams(std::span<const std::uint32_t> seq,
                                   std::span<const int> orders);

// Occurrence counts for one order. Keys are stored by packed value (the order
// is fixed per table).
struct FreqTable {
    int order = 0;
    std::unordered_map<std::uint64_t, std::uint64_t> counts;
    std::uint64_t total_positions = 0;

    // Commutative shard merge; counting in any sharding then merging equals a
    // single pass.
    void merge(const FreqTable& other);

    void save(const std::filesystem::path& path) const;
    static FreqTable load(const std::filesystem::path& path);
};

// Token documents as read from a corpus file (u32 little-endian ids,
// separated by 0xFFFFFFFF).
struct Corpus {
    std::vector<std::vector<std::uint32_t>> documents;

    std::uint64_t total_tokens() const;
    static Corpus load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

std::vector<FreqTable> count_ngrams(const Corpus& corpus, std::span<const int> orders);
// Shard variant used by the parallel-merge contract and its tests.
FreqTable count_ngrams_single(std::span<const std::vector<std::uint32_t>> documents,
                              int order);

// Top n_hot keys by count, descending; ties broken by ascending packed value.
struct HotSet {
    int order = 0;
    std::uint32_t n_hot = 0;                 // requested size
    std::vector<std::uint64_t> packed;       // rank order
    std::vector<std::uint64_t> counts;       // parallel to packed, non-increasing

    std::size_t size() const { return packed.size(); }
    NgramKey key(std::size_t rank) const {
        return NgramKey{static_cast<std::uint8_t>(order), packed[rank]};
    }

    void save(const std::filesystem::path& path) const;
    static HotSet load(const std::filesystem::path& path);
};

HotSet select_hot(const FreqTable& freq, std::uint32_t n_hot);
double coverage(const FreqTable& freq, const HotSet& hot);

// Vocabulary file: JSON array of token strings, index = token id.
std::vector<std::string> load_vocab(const std::filesystem::path& path);

}  // namespace engram
