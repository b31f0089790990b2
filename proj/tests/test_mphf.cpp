#include <doctest.h>

#include <filesystem>
#include <unordered_set>
#include <vector>

#include "engram/io.hpp"
#include "engram/mphf.hpp"
#include "engram/rng.hpp"

using namespace engram;
namespace fs = std::filesystem;

namespace {

std::vector<NgramKey> random_distinct_keys(std::size_t n, std::uint64_t seed,
                                           int order = 2) {
    Rng rng(seed);
    std::unordered_set<std::uint64_t> seen;
    std::vector<NgramKey> keys;
    keys.reserve(n);
    while (keys.size() < n) {
        std::vector<std::uint32_t> ids(order);
        for (auto& id : ids)
            id = static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds));
        NgramKey key = NgramKey::pack(ids);
        if (seen.insert(key.tag()).second) keys.push_back(key);
    }
    return keys;
}

// Occupancy-bitmap oracle for bijectivity, independent of the verification
// pass inside build().
void check_bijection(const Mphf& m, std::span<const NgramKey> keys) {
    std::vector<bool> hit(keys.size(), false);
    for (const NgramKey& key : keys) {
        std::uint64_t idx = m.query(key);
        REQUIRE(idx < keys.size());
        REQUIRE_FALSE(hit[idx]);
        hit[idx] = true;
    }
}

}  // namespace

TEST_CASE("three keys map onto a permutation of {0,1,2}") {
    auto keys = random_distinct_keys(3, 11);
    Mphf m = Mphf::build(keys, 2.0, 16, 42);
    std::unordered_set<std::uint64_t> values;
    for (const NgramKey& key : keys) values.insert(m.query(key));
    CHECK(values == std::unordered_set<std::uint64_t>{0, 1, 2});
}

TEST_CASE("empty build and empty query") {
    Mphf m = Mphf::build({}, 2.0, 16, 42);
    CHECK(m.empty());
    CHECK(m.size() == 0);
    NgramKey key = NgramKey::pack(std::vector<std::uint32_t>{1, 2});
    CHECK_THROWS_AS(m.query(key), StateError);
}

TEST_CASE("duplicate keys are rejected with the offender named") {
    auto keys = random_distinct_keys(10, 3);
    keys.push_back(keys[4]);
    CHECK_THROWS_WITH_AS(Mphf::build(keys, 2.0, 16, 42),
                         doctest::Contains("duplicate key"), InputError);
}

TEST_CASE("preconditions") {
    auto keys = random_distinct_keys(4, 5);
    CHECK_THROWS_AS(Mphf::build(keys, 0.99, 16, 42), InputError);
    CHECK_THROWS_AS(Mphf::build(keys, 2.0, 0, 42), InputError);
}

TEST_CASE("100k keys: bijectivity, pseudo-indices, space band") {
    auto keys = random_distinct_keys(100000, 2024);
    Mphf m = Mphf::build(keys, 2.0, 16, 42);
    check_bijection(m, keys);

    auto stats = m.stats();
    INFO("bits/key=", stats.bits_per_key, " levels=", stats.levels_used,
         " fallback=", stats.fallback_keys);
    CHECK(stats.bits_per_key >= 2.0);
    CHECK(stats.bits_per_key <= 6.0);

    // non-member queries return deterministic in-range pseudo-indices
    std::unordered_set<std::uint64_t> members;
    for (const NgramKey& key : keys) members.insert(key.tag());
    Rng rng(8);
    for (int i = 0; i < 10000; ++i) {
        std::vector<std::uint32_t> ids{
            static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds)),
            static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds))};
        NgramKey probe = NgramKey::pack(ids);
        if (members.count(probe.tag())) continue;
        std::uint64_t idx = probe.tag(), first = m.query(probe);
        (void)idx;
        CHECK(first < m.size());
        CHECK(m.query(probe) == first);
    }
}

TEST_CASE("levels shrink as gamma grows; space stays in the sanity band") {
    // Wider levels mean fewer collisions per level, so the cascade gets
    // shorter as gamma grows while total bits grow roughly like
    // gamma / (1 - collision fraction). Both are reported; the band check
    // keeps every setting inside [2, 6] bits/key.
    auto keys = random_distinct_keys(20000, 99);
    int prev_levels = 1 << 20;
    for (double gamma : {1.0, 1.5, 2.0, 3.0}) {
        Mphf m = Mphf::build(keys, gamma, 24, 42);
        check_bijection(m, keys);
        auto stats = m.stats();
        INFO("gamma=", gamma, " bits/key=", stats.bits_per_key,
             " levels=", stats.levels_used);
        CHECK(stats.levels_used <= prev_levels);
        prev_levels = stats.levels_used;
        CHECK(stats.bits_per_key >= 2.0);
        CHECK(stats.bits_per_key <= 6.0);
    }
}

TEST_CASE("serialization round trip preserves every member index") {
    fs::path dir = fs::temp_directory_path() / "engram_mphf_test";
    fs::create_directories(dir);

    auto keys = random_distinct_keys(3, 21);
    Mphf small = Mphf::build(keys, 2.0, 16, 7);
    small.save(dir / "small.enph");
    Mphf small2 = Mphf::load(dir / "small.enph");
    small2.save(dir / "small2.enph");
    CHECK(read_file(dir / "small.enph") == read_file(dir / "small2.enph"));

    auto big_keys = random_distinct_keys(100000, 22);
    Mphf big = Mphf::build(big_keys, 2.0, 16, 7);
    big.save(dir / "big.enph");
    Mphf big2 = Mphf::load(dir / "big.enph");
    for (const NgramKey& key : big_keys) CHECK(big2.query(key) == big.query(key));
}

TEST_CASE("deserialize rejects corruption") {
    fs::path dir = fs::temp_directory_path() / "engram_mphf_test";
    fs::create_directories(dir);
    auto keys = random_distinct_keys(50, 31);
    Mphf m = Mphf::build(keys, 2.0, 16, 7);
    m.save(dir / "ok.enph");

    auto bytes = read_file(dir / "ok.enph");
    auto corrupted = bytes;
    corrupted[0] = 'X';
    write_file(dir / "bad_magic.enph", corrupted);
    CHECK_THROWS_AS(Mphf::load(dir / "bad_magic.enph"), FormatError);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    write_file(dir / "truncated.enph", truncated);
    CHECK_THROWS_AS(Mphf::load(dir / "truncated.enph"), FormatError);
}

TEST_CASE("construction is deterministic given keys, gamma and seed") {
    auto keys = random_distinct_keys(5000, 77);
    BinaryWriter w1, w2;
    Mphf::build(keys, 2.0, 16, 1234).serialize(w1);
    Mphf::build(keys, 2.0, 16, 1234).serialize(w2);
    CHECK(w1.buffer() == w2.buffer());

    BinaryWriter w3;
    Mphf::build(keys, 2.0, 16, 1235).serialize(w3);
    CHECK(w1.buffer() != w3.buffer());
}

TEST_CASE("fallback budget overflow raises a construction error") {
    auto keys = random_distinct_keys(5000, 12);
    // one level at gamma 1.0 leaves far more than 16 residual keys
    CHECK_THROWS_AS(Mphf::build(keys, 1.0, 1, 42, 16), InvariantError);
}
