#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "engram/hashing.hpp"
#include "engram/mphf.hpp"
#include "engram/ngram.hpp"
#include "engram/rng.hpp"
#include "engram/tensor.hpp"

namespace engram {

inline constexpr int kMaxOrders = 2;   // orders drawn from {2,3}
inline constexpr int kMaxHeads = 8;

enum class TierMode { hash_only, two_tier };

inline std::string tier_mode_name(TierMode m) {
    return m == TierMode::hash_only ? "hash_only" : "two_tier";
}
inline TierMode parse_tier_mode(const std::string& s) {
    if (s == "hash_only") return TierMode::hash_only;
    if (s == "two_tier") return TierMode::two_tier;
    throw UsageError("unknown tier mode: " + s + " (expected hash_only or two_tier)");
}

// Geometry of the shared n-gram memory: which orders exist, how many hash
// heads and dims per head, hot rows and nominal cold slots per order.
struct TierConfig {
    std::vector<int> orders{2, 3};
    int heads_k = 2;
    int head_dim = 64;
    std::vector<std::uint64_t> n_hot;        // per order, aligned with `orders`
    std::vector<std::uint64_t> cold_slots;   // nominal slots per head, per order
    TierMode mode = TierMode::two_tier;

    int d_mem() const { return static_cast<int>(orders.size()) * heads_k * head_dim; }
    int hot_row_dim() const { return heads_k * head_dim; }

    void validate() const;
};

// Embedding parameter accounting. Nominal counts use the configured round
// slot numbers; actual counts use prime-rounded cold tables as built.
struct ParamCount {
    std::uint64_t hot_nominal = 0;
    std::uint64_t cold_nominal = 0;
    std::uint64_t total_nominal = 0;
    std::uint64_t hot_actual = 0;
    std::uint64_t cold_actual = 0;
    std::uint64_t total_actual = 0;
};

ParamCount param_count(const TierConfig& cfg);

enum class Route : std::uint8_t { absent = 0, hot = 1, cold = 2 };

// Per-position, per-order routing record kept from the forward retrieval so
// the backward pass can scatter gradients into exactly the touched rows.
struct RouteInfo {
    Route route = Route::absent;
    std::uint64_t hot_index = 0;
    std::array<std::uint64_t, kMaxHeads> cold_index{};
};

// One retrieval: the concatenated memory vector (orders ascending, heads
// within order) plus the route taken per order.
template <typename T>
struct Retrieved {
    std::vector<T> values;                    // length d_mem
    std::vector<RouteInfo> routes;            // per order
};

// Retrieval for a whole sequence; e is [positions x d_mem].
template <typename T>
struct RetrievalBatch {
    Mat<T> e;
    std::vector<std::vector<RouteInfo>> routes;  // [position][order]
};

// The shared embedding storage: one hot table per order (row = K*d), K cold
// tables per order (row = d), the MPHF + fingerprint membership pair, and
// the hash family for cold indexing. Shared across all fusion layers.
template <typename T>
struct MemoryStore {
    TierConfig cfg;
    HashHeadFamily family;
    std::uint64_t fp_seed = 0;
    std::uint64_t init_seed = 0;
    bool shared_across_layers = true;

    std::vector<Mat<T>> hot_tables;                 // per order: [n_hot x K*d]
    std::vector<std::vector<Mat<T>>> cold_tables;   // per order, per head: [M' x d]
    std::vector<std::vector<std::uint32_t>> fp_tables;  // per order: [hot keys]
    std::vector<Mphf> mphfs;                        // per order
    std::vector<std::uint64_t> cold_prime;          // per order

    int order_index(int order) const {
        for (std::size_t i = 0; i < cfg.orders.size(); ++i)
            if (cfg.orders[i] == order) return static_cast<int>(i);
        throw InputError("order " + std::to_string(order) + " not configured");
    }
};

struct MphfBuildOptions {
    double gamma = 2.0;
    int max_levels = 16;
    std::uint64_t seed = 0;
};

// Build the store from per-order hot sets. Embeddings are N(0, 0.02^2) from
// init_seed with one derived stream per table, so rebuilds are byte-identical.
// In hash_only mode no hot table, fingerprints or MPHF are allocated.
template <typename T>
MemoryStore<T> build_store(std::span<const HotSet> hot_sets, const TierConfig& cfg,
                           std::uint64_t init_seed, const HashHeadFamily& family,
                           std::uint64_t fp_seed, const MphfBuildOptions& mphf_opts);

// Algorithm: query the MPHF, compare the slot fingerprint against the key's;
// on a match take the dedicated hot row, otherwise concatenate the K cold
// rows. Absent keys (early positions) contribute zeros.
template <typename T>
void retrieve_into(const MemoryStore<T>& store,
                   std::span<const std::optional<NgramKey>> key_per_order,
                   std::span<T> out, std::span<RouteInfo> routes_out);

template <typename T>
Retrieved<T> retrieve(const MemoryStore<T>& store,
                      std::span<const std::optional<NgramKey>> key_per_order);

// keys_per_order: one column per configured order, each sized [positions].
template <typename T>
RetrievalBatch<T> retrieve_batch(
    const MemoryStore<T>& store,
    std::span<const std::vector<std::optional<NgramKey>>> keys_per_order,
    std::size_t begin, std::size_t end);

// ENST store checkpoint (float tables only).
void save_store(const MemoryStore<float>& store, const std::filesystem::path& path);
MemoryStore<float> load_store(const std::filesystem::path& path);

// Checks the hot-path wiring: every hot key must route hot to a distinct row
// whose index is the MPHF bijection value and whose stored fingerprint
// matches. Throws InvariantError on any violation.
template <typename T>
void verify_store_membership(const MemoryStore<T>& store,
                             std::span<const HotSet> hot_sets) {
    if (store.cfg.mode != TierMode::two_tier)
        throw InputError("verify_store_membership: store is not two_tier");
    for (const HotSet& hot : hot_sets) {
        int oi = store.order_index(hot.order);
        std::vector<bool> seen(store.fp_tables[oi].size(), false);
        for (std::size_t i = 0; i < hot.size(); ++i) {
            NgramKey key = hot.key(i);
            std::uint64_t idx = store.mphfs[oi].query(key);
            if (idx >= store.fp_tables[oi].size())
                throw InvariantError("store: hot key index out of range");
            if (seen[idx])
                throw InvariantError("store: two hot keys share row " +
                                     std::to_string(idx));
            seen[idx] = true;
            if (store.fp_tables[oi][idx] != fingerprint(key, store.fp_seed))
                throw InvariantError(
                    "store: fingerprint table inconsistent with hot set (stale "
                    "artifacts?)");
        }
    }
}

// Wall-clock lookup throughput on identical key streams, hash_only vs
// two_tier. Report-only; the two stores must share TierConfig geometry.
struct BenchResult {
    double hash_only_lookups_per_sec = 0.0;
    double two_tier_lookups_per_sec = 0.0;
    double ratio = 0.0;          // two_tier / hash_only
    double hot_route_fraction = 0.0;
    std::uint64_t stream_size = 0;
    int repetitions = 0;
};

BenchResult bench_lookup(const MemoryStore<float>& hash_store,
                         const MemoryStore<float>& two_tier_store,
                         std::span<const std::vector<std::optional<NgramKey>>> stream,
                         int repetitions);

// ---------------------------------------------------------------------------
// template definitions

template <typename T>
MemoryStore<T> build_store(std::span<const HotSet> hot_sets, const TierConfig& cfg,
                           std::uint64_t init_seed, const HashHeadFamily& family,
                           std::uint64_t fp_seed, const MphfBuildOptions& mphf_opts) {
    cfg.validate();
    MemoryStore<T> store;
    store.cfg = cfg;
    store.family = family;
    store.fp_seed = fp_seed;
    store.init_seed = init_seed;

    const bool two_tier = cfg.mode == TierMode::two_tier;
    const int n_orders = static_cast<int>(cfg.orders.size());
    store.cold_tables.resize(n_orders);
    store.cold_prime.resize(n_orders);
    if (two_tier) {
        store.hot_tables.resize(n_orders);
        store.fp_tables.resize(n_orders);
        store.mphfs.resize(n_orders);
    }

    auto gaussian_fill = [&](Mat<T>& m, const std::string& name) {
        Rng rng(mix_seed(init_seed, fnv1a64(name)));
        for (T& v : m.data) v = static_cast<T>(rng.next_gaussian() * 0.02);
    };

    for (int oi = 0; oi < n_orders; ++oi) {
        const int order = cfg.orders[oi];
        store.cold_prime[oi] = next_prime_at_or_above(cfg.cold_slots[oi]);
        store.cold_tables[oi].resize(cfg.heads_k);
        for (int k = 0; k < cfg.heads_k; ++k) {
            store.cold_tables[oi][k] =
                Mat<T>(store.cold_prime[oi], static_cast<std::size_t>(cfg.head_dim));
            gaussian_fill(store.cold_tables[oi][k],
                          "cold_o" + std::to_string(order) + "_h" + std::to_string(k));
        }
        if (!two_tier) continue;

        const HotSet* hot = nullptr;
        for (const HotSet& hs : hot_sets)
            if (hs.order == order) hot = &hs;
        if (hot == nullptr)
            throw InputError("build_store: no hot set for order " + std::to_string(order));
        if (hot->size() > cfg.n_hot[oi])
            throw InputError("build_store: hot set larger than configured n_hot");

        store.hot_tables[oi] = Mat<T>(cfg.n_hot[oi],
                                      static_cast<std::size_t>(cfg.hot_row_dim()));
        gaussian_fill(store.hot_tables[oi], "hot_o" + std::to_string(order));

        std::vector<NgramKey> keys(hot->size());
        for (std::size_t i = 0; i < hot->size(); ++i) keys[i] = hot->key(i);
        store.mphfs[oi] = Mphf::build(keys, mphf_opts.gamma, mphf_opts.max_levels,
                                      mix_seed(mphf_opts.seed, order));

        // fp_table[i] = fingerprint of the key whose query index is i; the
        // bijection guarantees each slot is written exactly once.
        store.fp_tables[oi].assign(hot->size(), 0);
        for (const NgramKey& key : keys) {
            std::uint64_t idx = store.mphfs[oi].query(key);
            store.fp_tables[oi][idx] = fingerprint(key, fp_seed);
        }
    }
    return store;
}

template <typename T>
void retrieve_into(const MemoryStore<T>& store,
                   std::span<const std::optional<NgramKey>> key_per_order,
                   std::span<T> out, std::span<RouteInfo> routes_out) {
    const TierConfig& cfg = store.cfg;
    const int kd = cfg.hot_row_dim();
    const int d = cfg.head_dim;
    for (std::size_t oi = 0; oi < cfg.orders.size(); ++oi) {
        std::span<T> slice = out.subspan(oi * kd, kd);
        RouteInfo& info = routes_out[oi];
        info = RouteInfo{};
        const auto& maybe_key = key_per_order[oi];
        if (!maybe_key.has_value()) {
            std::fill(slice.begin(), slice.end(), T{});
            continue;
        }
        const NgramKey& key = *maybe_key;
        if (cfg.mode == TierMode::two_tier) {
            std::uint64_t idx = store.mphfs[oi].query(key);
            if (store.fp_tables[oi][idx] == fingerprint(key, store.fp_seed)) {
                auto row = store.hot_tables[oi].row(idx);
                std::copy(row.begin(), row.end(), slice.begin());
                info.route = Route::hot;
                info.hot_index = idx;
                continue;
            }
        }
        info.route = Route::cold;
        for (int k = 0; k < cfg.heads_k; ++k) {
            std::uint64_t slot = store.family.head_index(key, k, store.cold_prime[oi]);
            info.cold_index[k] = slot;
            auto row = store.cold_tables[oi][k].row(slot);
            std::copy(row.begin(), row.end(), slice.subspan(k * d, d).begin());
        }
    }
}

template <typename T>
Retrieved<T> retrieve(const MemoryStore<T>& store,
                      std::span<const std::optional<NgramKey>> key_per_order) {
    Retrieved<T> r;
    r.values.resize(store.cfg.d_mem());
    r.routes.resize(store.cfg.orders.size());
    retrieve_into(store, key_per_order, std::span<T>(r.values),
                  std::span<RouteInfo>(r.routes));
    return r;
}

template <typename T>
RetrievalBatch<T> retrieve_batch(
    const MemoryStore<T>& store,
    std::span<const std::vector<std::optional<NgramKey>>> keys_per_order,
    std::size_t begin, std::size_t end) {
    const std::size_t n = end - begin;
    const std::size_t n_orders = store.cfg.orders.size();
    RetrievalBatch<T> batch;
    batch.e = Mat<T>(n, static_cast<std::size_t>(store.cfg.d_mem()));
    batch.routes.assign(n, std::vector<RouteInfo>(n_orders));
    std::vector<std::optional<NgramKey>> keys(n_orders);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t oi = 0; oi < n_orders; ++oi)
            keys[oi] = keys_per_order[oi][begin + t];
        retrieve_into(store, keys, batch.e.row(t), std::span<RouteInfo>(batch.routes[t]));
    }
    return batch;
}

}  // namespace engram
