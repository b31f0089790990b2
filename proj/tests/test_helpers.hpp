// Shared fixtures for model-level tests: a micro two-tier store and backbone
// sized so finite-difference sweeps stay fast.
#pragma once

#include <unordered_set>
#include <vector>

#include "engram/backbone.hpp"
#include "engram/memory.hpp"
#include "engram/rng.hpp"

namespace engram::testing {

inline std::vector<NgramKey> micro_keys(std::size_t n, std::uint64_t seed, int order,
                                        std::uint32_t id_bound) {
    Rng rng(seed);
    std::unordered_set<std::uint64_t> seen;
    std::vector<NgramKey> keys;
    while (keys.size() < n) {
        std::vector<std::uint32_t> ids(order);
        for (auto& id : ids) id = static_cast<std::uint32_t>(rng.next_below(id_bound));
        NgramKey key = NgramKey::pack(ids);
        if (seen.insert(key.tag()).second) keys.push_back(key);
    }
    return keys;
}

inline HotSet make_hot_set(int order, const std::vector<NgramKey>& keys) {
    HotSet hot;
    hot.order = order;
    hot.n_hot = static_cast<std::uint32_t>(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        hot.packed.push_back(keys[i].packed);
        hot.counts.push_back(keys.size() - i);
    }
    return hot;
}

struct MicroSetup {
    BackboneConfig backbone;
    TierConfig tier;
    std::vector<HotSet> hot_sets;
};

inline MicroSetup micro_setup(TierMode mode = TierMode::two_tier) {
    MicroSetup s;
    s.backbone.vocab_size = 50;
    s.backbone.d_model = 16;
    s.backbone.n_layers = 2;
    s.backbone.n_heads = 2;
    s.backbone.seq_len = 8;
    s.backbone.engram_layers = {1};
    s.backbone.init_seed = 11;

    s.tier.orders = {2, 3};
    s.tier.heads_k = 2;
    s.tier.head_dim = 4;
    s.tier.n_hot = {4, 4};
    s.tier.cold_slots = {7, 7};
    s.tier.mode = mode;

    if (mode == TierMode::two_tier) {
        // hot keys drawn from the same id range the token stream uses, so
        // some retrievals actually take the hot route
        s.hot_sets.push_back(make_hot_set(2, micro_keys(4, 101, 2, 50)));
        s.hot_sets.push_back(make_hot_set(3, micro_keys(4, 102, 3, 50)));
    }
    return s;
}

template <typename T>
MemoryStore<T> micro_store(const MicroSetup& s, std::uint64_t init_seed = 21) {
    HashHeadFamily family = HashHeadFamily::derive(31, 3, s.tier.heads_k);
    return build_store<T>(s.hot_sets, s.tier, init_seed, family, 41, {});
}

// Extract per-order key columns for a token window (identity canonical map).
inline std::vector<std::vector<std::optional<NgramKey>>> keys_for_tokens(
    std::span<const std::uint32_t> tokens, std::span<const int> orders) {
    PositionKeys pk = extract_suffix_ngrams(tokens, orders);
    return pk.keys;
}

}  // namespace engram::testing
