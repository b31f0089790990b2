#include "engram/memory.hpp"

#include <nlohmann/json.hpp>

namespace engram {

namespace {
constexpr std::uint16_t kStoreVersion = 1;
constexpr std::uint16_t kFpVersion = 1;
}  // namespace

void TierConfig::validate() const {
    if (orders.empty() || orders.size() > kMaxOrders)
        throw UsageError("tier config: need 1 or 2 orders");
    for (std::size_t i = 0; i < orders.size(); ++i) {
        if (orders[i] < kMinOrder || orders[i] > kMaxOrder)
            throw UsageError("tier config: orders must be drawn from {2,3}");
        for (std::size_t j = i + 1; j < orders.size(); ++j)
            if (orders[i] == orders[j]) throw UsageError("tier config: duplicate order");
        if (i > 0 && orders[i] < orders[i - 1])
            throw UsageError("tier config: orders must be ascending");
    }
    if (heads_k < 1 || heads_k > kMaxHeads)
        throw UsageError("tier config: heads_k out of range");
    if (head_dim < 1) throw UsageError("tier config: head_dim must be >= 1");
    if (cold_slots.size() != orders.size())
        throw UsageError("tier config: cold_slots must align with orders");
    for (std::uint64_t m : cold_slots)
        if (m < 1) throw UsageError("tier config: cold slot count must be >= 1");
    if (mode == TierMode::two_tier) {
        if (n_hot.size() != orders.size())
            throw UsageError("tier config: n_hot must align with orders");
        for (std::uint64_t n : n_hot)
            if (n < 1) throw UsageError("tier config: n_hot must be >= 1 in two_tier mode");
    }
}

ParamCount param_count(const TierConfig& cfg) {
    ParamCount pc;
    const std::uint64_t k = static_cast<std::uint64_t>(cfg.heads_k);
    const std::uint64_t d = static_cast<std::uint64_t>(cfg.head_dim);
    for (std::size_t oi = 0; oi < cfg.orders.size(); ++oi) {
        if (cfg.mode == TierMode::two_tier) {
            pc.hot_nominal += cfg.n_hot[oi] * k * d;
            pc.hot_actual += cfg.n_hot[oi] * k * d;
        }
        pc.cold_nominal += k * cfg.cold_slots[oi] * d;
        pc.cold_actual += k * next_prime_at_or_above(cfg.cold_slots[oi]) * d;
    }
    pc.total_nominal = pc.hot_nominal + pc.cold_nominal;
    pc.total_actual = pc.hot_actual + pc.cold_actual;
    return pc;
}

// ---------------------------------------------------------------------------
// ENST store checkpoint: magic, version, TierConfig echo (JSON), seeds, then
// tables in declared order as little-endian f32; per order in two_tier mode
// the MPHF (its own ENPH format) and fingerprint table (ENFP) are embedded.

void save_store(const MemoryStore<float>& store, const std::filesystem::path& path) {
    BinaryWriter w;
    w.magic("ENST");
    w.u16(kStoreVersion);

    nlohmann::ordered_json cfg_json{
        {"orders", store.cfg.orders},
        {"heads_k", store.cfg.heads_k},
        {"head_dim", store.cfg.head_dim},
        {"n_hot", store.cfg.n_hot},
        {"cold_slots", store.cfg.cold_slots},
        {"mode", tier_mode_name(store.cfg.mode)},
    };
    w.str(cfg_json.dump());
    w.u64(store.family.family_seed());
    w.u64(store.fp_seed);
    w.u64(store.init_seed);
    w.u8(store.shared_across_layers ? 1 : 0);

    const bool two_tier = store.cfg.mode == TierMode::two_tier;
    for (std::size_t oi = 0; oi < store.cfg.orders.size(); ++oi) {
        if (two_tier) {
            const Mat<float>& hot = store.hot_tables[oi];
            w.u64(hot.rows);
            w.u64(hot.cols);
            for (float v : hot.data) w.f32(v);
        }
        w.u64(store.cold_prime[oi]);
        for (const Mat<float>& table : store.cold_tables[oi]) {
            w.u64(table.rows);
            w.u64(table.cols);
            for (float v : table.data) w.f32(v);
        }
        if (two_tier) {
            store.mphfs[oi].serialize(w);
            w.magic("ENFP");
            w.u16(kFpVersion);
            w.u8(static_cast<std::uint8_t>(store.cfg.orders[oi]));
            w.u64(store.fp_tables[oi].size());
            for (std::uint32_t fp : store.fp_tables[oi]) w.u32(fp);
        }
    }
    write_file(path, w.buffer());
}

MemoryStore<float> load_store(const std::filesystem::path& path) {
    auto raw = read_file(path);
    BinaryReader r(raw);
    r.expect_magic("ENST");
    std::uint16_t version = r.u16();
    if (version != kStoreVersion)
        throw FormatError("unsupported ENST version " + std::to_string(version));

    MemoryStore<float> store;
    nlohmann::json cfg_json;
    try {
        cfg_json = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("ENST config echo is not valid JSON: " + std::string(e.what()));
    }
    store.cfg.orders = cfg_json.at("orders").get<std::vector<int>>();
    store.cfg.heads_k = cfg_json.at("heads_k").get<int>();
    store.cfg.head_dim = cfg_json.at("head_dim").get<int>();
    store.cfg.n_hot = cfg_json.at("n_hot").get<std::vector<std::uint64_t>>();
    store.cfg.cold_slots = cfg_json.at("cold_slots").get<std::vector<std::uint64_t>>();
    store.cfg.mode = parse_tier_mode(cfg_json.at("mode").get<std::string>());
    store.cfg.validate();

    std::uint64_t family_seed = r.u64();
    store.fp_seed = r.u64();
    store.init_seed = r.u64();
    store.shared_across_layers = r.u8() != 0;

    int max_order = 0;
    for (int order : store.cfg.orders) max_order = std::max(max_order, order);
    store.family = HashHeadFamily::derive(family_seed, max_order, store.cfg.heads_k);

    const bool two_tier = store.cfg.mode == TierMode::two_tier;
    const std::size_t n_orders = store.cfg.orders.size();
    store.cold_tables.resize(n_orders);
    store.cold_prime.resize(n_orders);
    if (two_tier) {
        store.hot_tables.resize(n_orders);
        store.fp_tables.resize(n_orders);
        store.mphfs.resize(n_orders);
    }

    auto read_mat = [&r](Mat<float>& m) {
        std::uint64_t rows = r.u64();
        std::uint64_t cols = r.u64();
        m = Mat<float>(rows, cols);
        for (float& v : m.data) v = r.f32();
    };

    for (std::size_t oi = 0; oi < n_orders; ++oi) {
        if (two_tier) read_mat(store.hot_tables[oi]);
        store.cold_prime[oi] = r.u64();
        store.cold_tables[oi].resize(store.cfg.heads_k);
        for (Mat<float>& table : store.cold_tables[oi]) read_mat(table);
        if (two_tier) {
            store.mphfs[oi] = Mphf::deserialize(r);
            r.expect_magic("ENFP");
            std::uint16_t fp_version = r.u16();
            if (fp_version != kFpVersion)
                throw FormatError("unsupported ENFP version " + std::to_string(fp_version));
            int order = r.u8();
            if (order != store.cfg.orders[oi])
                throw FormatError("ENFP order mismatch inside store");
            std::uint64_t n = r.u64();
            store.fp_tables[oi].resize(n);
            for (std::uint32_t& fp : store.fp_tables[oi]) fp = r.u32();
        }
    }
    return store;
}

BenchResult bench_lookup(const MemoryStore<float>& hash_store,
                         const MemoryStore<float>& two_tier_store,
                         std::span<const std::vector<std::optional<NgramKey>>> stream,
                         int repetitions) {
    if (stream.empty()) throw InputError("bench_lookup: empty key stream");
    if (repetitions < 1) throw InputError("bench_lookup: repetitions must be >= 1");
    if (hash_store.cfg.mode != TierMode::hash_only ||
        two_tier_store.cfg.mode != TierMode::two_tier)
        throw InputError("bench_lookup: stores must be (hash_only, two_tier)");

    const std::size_t n_orders = hash_store.cfg.orders.size();
    std::vector<float> out(static_cast<std::size_t>(hash_store.cfg.d_mem()));
    std::vector<RouteInfo> routes(n_orders);

    auto run = [&](const MemoryStore<float>& store) {
        volatile float sink = 0.0f;
        auto t0 = std::chrono::steady_clock::now();
        for (int rep = 0; rep < repetitions; ++rep) {
            for (const auto& keys : stream) {
                retrieve_into(store, keys, std::span<float>(out),
                              std::span<RouteInfo>(routes));
                sink = sink + out[0];
            }
        }
        auto t1 = std::chrono::steady_clock::now();
        (void)sink;
        double secs = std::chrono::duration<double>(t1 - t0).count();
        double lookups = static_cast<double>(stream.size()) * repetitions;
        return lookups / std::max(secs, 1e-12);
    };

    BenchResult result;
    result.stream_size = stream.size();
    result.repetitions = repetitions;
    result.hash_only_lookups_per_sec = run(hash_store);
    result.two_tier_lookups_per_sec = run(two_tier_store);
    result.ratio = result.two_tier_lookups_per_sec / result.hash_only_lookups_per_sec;

    std::uint64_t hot_routes = 0, present = 0;
    for (const auto& keys : stream) {
        retrieve_into(two_tier_store, keys, std::span<float>(out),
                      std::span<RouteInfo>(routes));
        for (const RouteInfo& info : routes) {
            if (info.route == Route::absent) continue;
            ++present;
            if (info.route == Route::hot) ++hot_routes;
        }
    }
    result.hot_route_fraction =
        present == 0 ? 0.0 : static_cast<double>(hot_routes) / static_cast<double>(present);
    return result;
}

}  // namespace engram
