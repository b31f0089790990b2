#include <doctest.h>

#include <filesystem>
#include <map>
#include <vector>

#include "engram/io.hpp"
#include "engram/ngram.hpp"
#include "engram/rng.hpp"
#include "engram/synthetic.hpp"

using namespace engram;
namespace fs = std::filesystem;

namespace {

// Independent oracle: nested-loop counter keyed by the raw id tuple, no
// shared code with FreqTable or NgramKey packing.
std::map<std::vector<std::uint32_t>, std::uint64_t> naive_count(
    const std::vector<std::vector<std::uint32_t>>& docs, int order) {
    std::map<std::vector<std::uint32_t>, std::uint64_t> counts;
    for (const auto& doc : docs) {
        for (std::size_t t = 0; t + 1 >= static_cast<std::size_t>(order) &&
                                t < doc.size(); ++t) {
            if (t + 1 < static_cast<std::size_t>(order)) continue;
            std::vector<std::uint32_t> gram(doc.begin() + (t + 1 - order),
                                            doc.begin() + t + 1);
            ++counts[gram];
        }
    }
    return counts;
}

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "engram_ngram_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("canonicalize identity and explicit maps") {
    CanonicalMap id = CanonicalMap::identity(8);
    std::vector<std::uint32_t> tokens{5, 7, 5};
    CHECK(canonicalize(tokens, id) == std::vector<std::uint32_t>{5, 7, 5});

    CanonicalMap m;
    m.entries = {0, 0, 1};
    m.canonical_size = 2;
    std::vector<std::uint32_t> in{1, 2, 0};
    CHECK(canonicalize(in, m) == std::vector<std::uint32_t>{0, 1, 0});
}

TEST_CASE("canonicalize rejects out-of-range ids with position") {
    CanonicalMap id = CanonicalMap::identity(4);
    std::vector<std::uint32_t> bad{0, 9, 1};
    CHECK_THROWS_WITH_AS(canonicalize(bad, id),
                         doctest::Contains("position 1"), InputError);
}

TEST_CASE("lowercase rule collapses case variants") {
    std::vector<std::string> vocab{"A", "b", "C", "a", "d", "e", "B", "f", "g", "h"};
    std::vector<CanonicalRule> rules{CanonicalRule::lowercase};
    CanonicalMap m = CanonicalMap::build(vocab, rules);
    CHECK(m.canonical_size < vocab.size());
    CHECK(m.entries[0] == m.entries[3]);  // "A" and "a"
    CHECK(m.entries[1] == m.entries[6]);  // "b" and "B"

    // distinct-id count shrinks on a stream containing both cases
    std::vector<std::uint32_t> stream{0, 3, 1, 6, 2, 4};
    auto out = canonicalize(stream, m);
    auto distinct = [](std::span<const std::uint32_t> s) {
        std::vector<std::uint32_t> v(s.begin(), s.end());
        std::sort(v.begin(), v.end());
        return std::unique(v.begin(), v.end()) - v.begin();
    };
    CHECK(distinct(stream) > distinct(out));
}

TEST_CASE("strip_whitespace collapses whitespace tokens into one class") {
    std::vector<std::string> vocab{"\n", "\t", " ", "x", "y z"};
    std::vector<CanonicalRule> rules{CanonicalRule::strip_whitespace};
    CanonicalMap m = CanonicalMap::build(vocab, rules);
    CHECK(m.entries[0] == m.entries[1]);
    CHECK(m.entries[1] == m.entries[2]);
    CHECK(m.entries[3] != m.entries[0]);
    CHECK(m.entries[4] == m.entries[3] + 1);  // "y z" -> "yz", its own class
}

TEST_CASE("extract_suffix_ngrams basics") {
    const std::uint32_t a = 10, b = 11, c = 12;
    std::vector<int> o2{2};

    std::vector<std::uint32_t> seq{a, b, c};
    PositionKeys pk = extract_suffix_ngrams(seq, o2);
    CHECK_FALSE(pk.at(0, 0).has_value());
    CHECK(pk.at(0, 1)->unpack() == std::vector<std::uint32_t>{a, b});
    CHECK(pk.at(0, 2)->unpack() == std::vector<std::uint32_t>{b, c});

    std::vector<std::uint32_t> single{a};
    std::vector<int> o3{3};
    PositionKeys pk3 = extract_suffix_ngrams(single, o3);
    CHECK_FALSE(pk3.at(0, 0).has_value());

    std::vector<std::uint32_t> abab{a, b, a, b};
    PositionKeys pk4 = extract_suffix_ngrams(abab, o2);
    NgramKey ab = NgramKey::pack(std::vector<std::uint32_t>{a, b});
    int ab_positions = 0;
    for (std::size_t t = 0; t < abab.size(); ++t)
        if (pk4.at(0, t).has_value() && *pk4.at(0, t) == ab) ++ab_positions;
    CHECK(ab_positions == 2);
}

TEST_CASE("suffix alignment: unpacking reproduces the window") {
    Rng rng(99);
    std::vector<std::uint32_t> seq(200);
    for (auto& v : seq) v = static_cast<std::uint32_t>(rng.next_below(kMaxCanonicalIds));
    std::vector<int> orders{2, 3};
    PositionKeys pk = extract_suffix_ngrams(seq, orders);
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
        int order = orders[oi];
        for (std::size_t t = 0; t < seq.size(); ++t) {
            if (t + 1 < static_cast<std::size_t>(order)) {
                CHECK_FALSE(pk.at(oi, t).has_value());
                continue;
            }
            auto ids = pk.at(oi, t)->unpack();
            for (int j = 0; j < order; ++j) CHECK(ids[j] == seq[t + 1 - order + j]);
        }
    }
}

TEST_CASE("keys of different orders never compare equal") {
    NgramKey k2 = NgramKey::pack(std::vector<std::uint32_t>{0, 0});
    NgramKey k3 = NgramKey::pack(std::vector<std::uint32_t>{0, 0, 0});
    CHECK(k2.packed == k3.packed);
    CHECK_FALSE(k2 == k3);
    CHECK(k2.tag() != k3.tag());
}

TEST_CASE("packing rejects ids above 20 bits") {
    std::vector<std::uint32_t> ids{kMaxCanonicalIds, 1};
    CHECK_THROWS_AS(NgramKey::pack(ids), InputError);
}

TEST_CASE("count_ngrams hand cases") {
    const std::uint32_t a = 1, b = 2;
    Corpus corpus;
    corpus.documents = {{a, b, a, b}};
    std::vector<int> orders{2};
    auto tables = count_ngrams(corpus, orders);
    REQUIRE(tables.size() == 1);
    const FreqTable& t = tables[0];
    CHECK(t.total_positions == 3);
    CHECK(t.counts.size() == 2);
    CHECK(t.counts.at(NgramKey::pack(std::vector<std::uint32_t>{a, b}).packed) == 2);
    CHECK(t.counts.at(NgramKey::pack(std::vector<std::uint32_t>{b, a}).packed) == 1);

    Corpus empty;
    auto empty_tables = count_ngrams(empty, orders);
    CHECK(empty_tables[0].counts.empty());
    CHECK(empty_tables[0].total_positions == 0);
}

TEST_CASE("count_ngrams matches the naive counter on a random doc") {
    Corpus corpus = make_uniform_corpus(16, 10000, 42, 10000);
    REQUIRE(corpus.documents.size() == 1);
    std::vector<int> orders{2};
    FreqTable table = count_ngrams(corpus, orders)[0];
    CHECK(table.total_positions == 9999);

    auto oracle = naive_count(corpus.documents, 2);
    std::uint64_t oracle_total = 0;
    for (const auto& [gram, count] : oracle) {
        CHECK(table.counts.at(NgramKey::pack(gram).packed) == count);
        oracle_total += count;
    }
    CHECK(table.counts.size() == oracle.size());
    CHECK(oracle_total == table.total_positions);
}

TEST_CASE("merge associativity: sharded counting equals single pass") {
    Corpus corpus = make_zipf_corpus(64, 20000, 1.1, 7, 977);
    std::vector<int> orders{2, 3};
    for (int order : orders) {
        FreqTable whole = count_ngrams_single(corpus.documents, order);
        // three shards with uneven sizes, merged in a scrambled order
        std::span<const std::vector<std::uint32_t>> docs(corpus.documents);
        std::size_t third = corpus.documents.size() / 3;
        FreqTable s0 = count_ngrams_single(docs.subspan(0, third), order);
        FreqTable s1 = count_ngrams_single(docs.subspan(third, third), order);
        FreqTable s2 = count_ngrams_single(docs.subspan(2 * third), order);
        FreqTable merged;
        merged.order = order;
        merged.merge(s2);
        merged.merge(s0);
        merged.merge(s1);
        CHECK(merged.total_positions == whole.total_positions);
        REQUIRE(merged.counts.size() == whole.counts.size());
        for (const auto& [packed, count] : whole.counts)
            CHECK(merged.counts.at(packed) == count);
    }
}

TEST_CASE("select_hot ordering and tie break") {
    FreqTable freq;
    freq.order = 2;
    NgramKey k1 = NgramKey::pack(std::vector<std::uint32_t>{9, 9});
    NgramKey k2 = NgramKey::pack(std::vector<std::uint32_t>{4, 4});
    NgramKey k3 = NgramKey::pack(std::vector<std::uint32_t>{2, 2});
    freq.counts = {{k1.packed, 5}, {k2.packed, 3}, {k3.packed, 3}};
    freq.total_positions = 11;

    HotSet hot = select_hot(freq, 2);
    REQUIRE(hot.size() == 2);
    CHECK(hot.packed[0] == k1.packed);
    // tie between k2 and k3 resolved by ascending packed value
    CHECK(hot.packed[1] == std::min(k2.packed, k3.packed));

    HotSet all = select_hot(freq, 10);
    CHECK(all.size() == 3);

    CHECK_THROWS_AS(select_hot(freq, 0), InputError);
}

TEST_CASE("select_hot matches a full-sort oracle on a zipf corpus") {
    Corpus corpus = make_zipf_corpus(256, 100000, 1.0, 13, 8192);
    FreqTable freq = count_ngrams_single(corpus.documents, 2);
    HotSet hot = select_hot(freq, 1000);

    std::vector<std::pair<std::uint64_t, std::uint64_t>> oracle(freq.counts.begin(),
                                                                freq.counts.end());
    std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    std::size_t expect = std::min<std::size_t>(1000, oracle.size());
    REQUIRE(hot.size() == expect);
    for (std::size_t i = 0; i < expect; ++i) {
        CHECK(hot.packed[i] == oracle[i].first);
        CHECK(hot.counts[i] == oracle[i].second);
    }

    // coverage equals the oracle ratio exactly
    std::uint64_t covered = 0;
    for (std::size_t i = 0; i < expect; ++i) covered += oracle[i].second;
    CHECK(coverage(freq, hot) ==
          doctest::Approx(static_cast<double>(covered) /
                          static_cast<double>(freq.total_positions))
              .epsilon(0.0));
}

TEST_CASE("coverage hand cases and monotonicity") {
    FreqTable freq;
    freq.order = 2;
    NgramKey k1 = NgramKey::pack(std::vector<std::uint32_t>{1, 1});
    NgramKey k2 = NgramKey::pack(std::vector<std::uint32_t>{1, 2});
    freq.counts = {{k1.packed, 3}, {k2.packed, 1}};
    freq.total_positions = 4;

    HotSet all = select_hot(freq, 2);
    CHECK(coverage(freq, all) == doctest::Approx(1.0));
    HotSet one = select_hot(freq, 1);
    CHECK(coverage(freq, one) == doctest::Approx(0.75));

    FreqTable empty;
    empty.order = 2;
    HotSet none;
    none.order = 2;
    CHECK_THROWS_AS(coverage(empty, none), EvaluationError);

    Corpus corpus = make_zipf_corpus(64, 30000, 1.0, 3, 4096);
    FreqTable zf = count_ngrams_single(corpus.documents, 2);
    double prev = 0.0;
    for (std::uint32_t n : {1u, 4u, 16u, 64u, 256u, 1024u}) {
        double c = coverage(zf, select_hot(zf, n));
        CHECK(c >= prev);
        prev = c;
    }
}

TEST_CASE("freq and hot set files round trip; determinism") {
    fs::path dir = temp_dir();
    Corpus corpus = make_zipf_corpus(64, 5000, 1.0, 5, 4096);
    FreqTable freq = count_ngrams_single(corpus.documents, 3);
    fs::path fp = dir / "t.enfq";
    freq.save(fp);
    FreqTable loaded = FreqTable::load(fp);
    CHECK(loaded.order == freq.order);
    CHECK(loaded.total_positions == freq.total_positions);
    CHECK(loaded.counts.size() == freq.counts.size());
    for (const auto& [packed, count] : freq.counts)
        CHECK(loaded.counts.at(packed) == count);

    // byte-identical re-serialization
    loaded.save(dir / "t2.enfq");
    CHECK(read_file(fp) == read_file(dir / "t2.enfq"));

    HotSet hot = select_hot(freq, 100);
    fs::path hp = dir / "t.enhs";
    hot.save(hp);
    HotSet hot2 = HotSet::load(hp);
    CHECK(hot2.order == hot.order);
    CHECK(hot2.n_hot == hot.n_hot);
    CHECK(hot2.packed == hot.packed);
    CHECK(hot2.counts == hot.counts);

    // repeated selection from the reloaded table serializes identically
    select_hot(loaded, 100).save(dir / "t2.enhs");
    CHECK(read_file(hp) == read_file(dir / "t2.enhs"));
}

TEST_CASE("format errors: bad magic and truncation") {
    fs::path dir = temp_dir();
    std::vector<std::uint8_t> junk{'X', 'X', 'X', 'X', 0, 0};
    write_file(dir / "bad.enfq", junk);
    CHECK_THROWS_AS(FreqTable::load(dir / "bad.enfq"), FormatError);
    write_file(dir / "bad.enhs", junk);
    CHECK_THROWS_AS(HotSet::load(dir / "bad.enhs"), FormatError);
}

TEST_CASE("corpus file round trip with separators") {
    fs::path dir = temp_dir();
    Corpus corpus;
    corpus.documents = {{1, 2, 3}, {4, 5}, {6}};
    corpus.save(dir / "c.bin");
    Corpus loaded = Corpus::load(dir / "c.bin");
    CHECK(loaded.documents == corpus.documents);
    CHECK(loaded.total_tokens() == 6);
}
