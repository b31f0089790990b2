#include <doctest.h>

#include <filesystem>
#include <unordered_set>

#include "engram/io.hpp"
#include "engram/memory.hpp"
#include "engram/rng.hpp"
#include "engram/synthetic.hpp"

using namespace engram;
namespace fs = std::filesystem;

namespace {

HotSet hot_set_from_keys(int order, const std::vector<NgramKey>& keys) {
    HotSet hot;
    hot.order = order;
    hot.n_hot = static_cast<std::uint32_t>(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        hot.packed.push_back(keys[i].packed);
        hot.counts.push_back(keys.size() - i);
    }
    return hot;
}

std::vector<NgramKey> distinct_keys(std::size_t n, std::uint64_t seed, int order = 2) {
    Rng rng(seed);
    std::unordered_set<std::uint64_t> seen;
    std::vector<NgramKey> keys;
    while (keys.size() < n) {
        std::vector<std::uint32_t> ids(order);
        for (auto& id : ids)
            id = static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds));
        NgramKey key = NgramKey::pack(ids);
        if (seen.insert(key.tag()).second) keys.push_back(key);
    }
    return keys;
}

TierConfig small_two_tier() {
    TierConfig cfg;
    cfg.orders = {2};
    cfg.heads_k = 2;
    cfg.head_dim = 4;
    cfg.n_hot = {3};
    cfg.cold_slots = {7};
    cfg.mode = TierMode::two_tier;
    return cfg;
}

}  // namespace

TEST_CASE("build_store shapes") {
    TierConfig cfg = small_two_tier();
    auto keys = distinct_keys(3, 1);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>(hot, cfg, 9, family, 4, {});

    REQUIRE(store.hot_tables.size() == 1);
    CHECK(store.hot_tables[0].rows == 3);
    CHECK(store.hot_tables[0].cols == 8);
    CHECK(store.fp_tables[0].size() == 3);
    REQUIRE(store.cold_tables[0].size() == 2);
    CHECK(store.cold_tables[0][0].rows == 7);  // 7 is already prime
    CHECK(store.cold_tables[0][0].cols == 4);
    CHECK(store.cfg.d_mem() == 8);

    TierConfig hash_cfg = cfg;
    hash_cfg.mode = TierMode::hash_only;
    auto hash_store = build_store<float>({}, hash_cfg, 9, family, 4, {});
    CHECK(hash_store.hot_tables.empty());
    CHECK(hash_store.fp_tables.empty());
    CHECK(hash_store.mphfs.empty());
    CHECK(hash_store.cfg.d_mem() == 8);  // interface parity with two_tier
}

TEST_CASE("cold slot counts round up to a prime") {
    TierConfig cfg = small_two_tier();
    cfg.cold_slots = {100};
    auto keys = distinct_keys(3, 2);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>(hot, cfg, 9, family, 4, {});
    CHECK(store.cold_prime[0] == 101);
    CHECK(store.cold_tables[0][0].rows == 101);
}

TEST_CASE("rebuild with the same seed is byte-identical") {
    fs::path dir = fs::temp_directory_path() / "engram_store_test";
    fs::create_directories(dir);
    TierConfig cfg = small_two_tier();
    auto keys = distinct_keys(3, 3);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    save_store(build_store<float>(hot, cfg, 9, family, 4, {}), dir / "a.enst");
    save_store(build_store<float>(hot, cfg, 9, family, 4, {}), dir / "b.enst");
    CHECK(read_file(dir / "a.enst") == read_file(dir / "b.enst"));

    save_store(build_store<float>(hot, cfg, 10, family, 4, {}), dir / "c.enst");
    CHECK(read_file(dir / "a.enst") != read_file(dir / "c.enst"));

    auto loaded = load_store(dir / "a.enst");
    save_store(loaded, dir / "d.enst");
    CHECK(read_file(dir / "a.enst") == read_file(dir / "d.enst"));
}

TEST_CASE("retrieval routes: hot row exactness, absent zeros, cold concat") {
    TierConfig cfg = small_two_tier();
    auto keys = distinct_keys(3, 4);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>(hot, cfg, 9, family, 4, {});

    for (const NgramKey& key : keys) {
        std::vector<std::optional<NgramKey>> probe{key};
        Retrieved<float> r = retrieve(store, probe);
        REQUIRE(r.routes[0].route == Route::hot);
        std::uint64_t idx = store.mphfs[0].query(key);
        CHECK(r.routes[0].hot_index == idx);
        auto row = store.hot_tables[0].row(idx);
        for (int c = 0; c < 8; ++c) CHECK(r.values[c] == row[c]);
    }

    std::vector<std::optional<NgramKey>> absent{std::nullopt};
    Retrieved<float> r0 = retrieve(store, absent);
    CHECK(r0.routes[0].route == Route::absent);
    for (float v : r0.values) CHECK(v == 0.0f);

    // a non-member lands on the cold path and concatenates K head rows
    NgramKey outsider = distinct_keys(64, 555)[63];
    bool member = false;
    for (const NgramKey& key : keys) member = member || key == outsider;
    REQUIRE_FALSE(member);
    std::vector<std::optional<NgramKey>> probe{outsider};
    Retrieved<float> rc = retrieve(store, probe);
    if (rc.routes[0].route == Route::cold) {  // overwhelmingly likely
        for (int k = 0; k < cfg.heads_k; ++k) {
            auto row = store.cold_tables[0][k].row(rc.routes[0].cold_index[k]);
            for (int c = 0; c < 4; ++c) CHECK(rc.values[k * 4 + c] == row[c]);
        }
    }
}

TEST_CASE("hash_only mode always takes the cold path") {
    TierConfig cfg = small_two_tier();
    cfg.mode = TierMode::hash_only;
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>({}, cfg, 9, family, 4, {});
    auto keys = distinct_keys(50, 6);
    for (const NgramKey& key : keys) {
        std::vector<std::optional<NgramKey>> probe{key};
        Retrieved<float> r = retrieve(store, probe);
        CHECK(r.routes[0].route == Route::cold);
    }
}

TEST_CASE("hot exactness holds exhaustively") {
    TierConfig cfg = small_two_tier();
    cfg.n_hot = {2000};
    cfg.cold_slots = {977};
    auto keys = distinct_keys(2000, 7);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>(hot, cfg, 9, family, 4, {});
    CHECK_NOTHROW(verify_store_membership(store, hot));
}

TEST_CASE("false-hot routes on random non-members stay near zero") {
    TierConfig cfg = small_two_tier();
    cfg.n_hot = {10000};
    cfg.cold_slots = {499};
    auto keys = distinct_keys(10000, 8);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto store = build_store<float>(hot, cfg, 9, family, 4, {});

    std::unordered_set<std::uint64_t> members;
    for (const NgramKey& key : keys) members.insert(key.tag());
    Rng rng(4242);
    int false_hot = 0, probes = 0;
    while (probes < 10000) {
        std::vector<std::uint32_t> ids{
            static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds)),
            static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds))};
        NgramKey probe = NgramKey::pack(ids);
        if (members.count(probe.tag())) continue;
        ++probes;
        std::vector<std::optional<NgramKey>> kp{probe};
        if (retrieve(store, kp).routes[0].route == Route::hot) ++false_hot;
    }
    CHECK(false_hot <= 3);
}

TEST_CASE("param_count reproduces the iso-parameter arithmetic") {
    TierConfig hash;
    hash.orders = {2, 3};
    hash.heads_k = 2;
    hash.head_dim = 64;
    hash.cold_slots = {500000, 500000};
    hash.mode = TierMode::hash_only;
    ParamCount hp = param_count(hash);
    CHECK(hp.hot_nominal == 0);
    CHECK(hp.cold_nominal == 128000000);
    CHECK(hp.total_nominal == 128000000);

    TierConfig nine;
    nine.orders = {2, 3};
    nine.heads_k = 2;
    nine.head_dim = 64;
    nine.n_hot = {100000, 100000};
    nine.cold_slots = {400000, 400000};
    nine.mode = TierMode::two_tier;
    ParamCount np = param_count(nine);
    CHECK(np.hot_nominal == 25600000);
    CHECK(np.cold_nominal == 102400000);
    CHECK(np.total_nominal == 128000000);

    // the standing iso gate
    CHECK(hp.total_nominal == np.total_nominal);

    // actuals round cold slots to primes
    CHECK(np.cold_actual >= np.cold_nominal);
    CHECK(np.hot_actual == np.hot_nominal);

    // a mispaired budget differs
    TierConfig bad = nine;
    bad.cold_slots = {450000, 450000};
    CHECK(param_count(bad).total_nominal != hp.total_nominal);

    TierConfig tiny;
    tiny.orders = {2};
    tiny.heads_k = 1;
    tiny.head_dim = 1;
    tiny.cold_slots = {1};
    tiny.mode = TierMode::hash_only;
    CHECK(param_count(tiny).total_nominal == 1);
}

TEST_CASE("bench_lookup contracts") {
    TierConfig cfg = small_two_tier();
    cfg.n_hot = {500};
    cfg.cold_slots = {499};
    auto keys = distinct_keys(500, 9);
    std::vector<HotSet> hot{hot_set_from_keys(2, keys)};
    HashHeadFamily family = HashHeadFamily::derive(3, 2, cfg.heads_k);
    auto two = build_store<float>(hot, cfg, 9, family, 4, {});
    TierConfig hash_cfg = cfg;
    hash_cfg.mode = TierMode::hash_only;
    auto hash = build_store<float>({}, hash_cfg, 9, family, 4, {});

    std::vector<std::vector<std::optional<NgramKey>>> stream;
    for (int i = 0; i < 200; ++i)
        stream.push_back({keys[static_cast<std::size_t>(i) % keys.size()]});

    CHECK_THROWS_AS(bench_lookup(hash, two, stream, 0), InputError);
    CHECK_THROWS_AS(
        bench_lookup(hash, two, std::span<const std::vector<std::optional<NgramKey>>>{},
                     3),
        InputError);

    BenchResult r = bench_lookup(hash, two, stream, 50);
    CHECK(r.hash_only_lookups_per_sec > 0.0);
    CHECK(r.two_tier_lookups_per_sec > 0.0);
    CHECK(r.hot_route_fraction == doctest::Approx(1.0));  // all members
    CHECK(r.stream_size == 200);
}
