#include "engram/ngram.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "engram/io.hpp"

namespace engram {

namespace {

constexpr std::uint16_t kFreqVersion = 1;
constexpr std::uint16_t kHotVersion = 1;

void check_order(int order) {
    if (order < kMinOrder || order > kMaxOrder)
        throw InputError("n-gram order must be in {2,3}, got " + std::to_string(order));
}

}  // namespace

CanonicalRule parse_canonical_rule(const std::string& name) {
    if (name == "identity") return CanonicalRule::identity;
    if (name == "lowercase") return CanonicalRule::lowercase;
    if (name == "strip_whitespace") return CanonicalRule::strip_whitespace;
    throw UsageError("unknown canonicalization rule: " + name);
}

std::string canonical_rule_name(CanonicalRule rule) {
    switch (rule) {
        case CanonicalRule::identity: return "identity";
        case CanonicalRule::lowercase: return "lowercase";
        case CanonicalRule::strip_whitespace: return "strip_whitespace";
    }
    return "identity";
}

CanonicalMap CanonicalMap::identity(std::uint32_t vocab_size) {
    CanonicalMap m;
    m.entries.resize(vocab_size);
    for (std::uint32_t i = 0; i < vocab_size; ++i) m.entries[i] = i;
    m.canonical_size = vocab_size;
    return m;
}

CanonicalMap CanonicalMap::build(std::span<const std::string> vocab,
                                 std::span<const CanonicalRule> rules) {
    CanonicalMap m;
    m.entries.resize(vocab.size());
    std::unordered_map<std::string, std::uint32_t> canon_ids;
    canon_ids.reserve(vocab.size());

    for (std::size_t tid = 0; tid < vocab.size(); ++tid) {
        std::string s = vocab[tid];
        for (CanonicalRule rule : rules) {
            switch (rule) {
                case CanonicalRule::identity:
                    break;
                case CanonicalRule::lowercase:
                    for (char& c : s)
                        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                    break;
                case CanonicalRule::strip_whitespace: {
                    std::string out;
                    out.reserve(s.size());
                    for (char c : s)
                        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
                    // all-whitespace tokens collapse into one class
                    s = out.empty() ? std::string(" ") : out;
                    break;
                }
            }
        }
        auto [it, inserted] =
            canon_ids.emplace(std::move(s), static_cast<std::uint32_t>(canon_ids.size()));
        m.entries[tid] = it->second;
    }
    m.canonical_size = static_cast<std::uint32_t>(canon_ids.size());
    return m;
}

std::vector<std::uint32_t> canonicalize(std::span<const std::uint32_t> tokens,
                                        const CanonicalMap& map) {
    std::vector<std::uint32_t> out(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= map.entries.size())
            throw InputError("token id " + std::to_string(tokens[i]) +
                             " out of range at position " + std::to_string(i));
        out[i] = map.entries[tokens[i]];
    }
    return out;
}

PositionKeys extract_suffix_ngrams(std::span<const std::uint32_t> seq,
                                   std::span<const int> orders) {
    if (seq.empty()) throw InputError("extract_suffix_ngrams: empty sequence");
    PositionKeys pk;
    for (int order : orders) {
        check_order(order);
        pk.orders.push_back(order);
        std::vector<std::optional<NgramKey>> col(seq.size());
        for (std::size_t t = static_cast<std::size_t>(order) - 1; t < seq.size(); ++t)
            col[t] = NgramKey::pack(seq.subspan(t + 1 - order, order));
        pk.keys.push_back(std::move(col));
    }
    return pk;
}

void FreqTable::merge(const FreqTable& other) {
    if (order != other.order) throw InputError("FreqTable merge: mismatched orders");
    for (const auto& [packed, count] : other.counts) counts[packed] += count;
    total_positions += other.total_positions;
}

FreqTable count_ngrams_single(std::span<const std::vector<std::uint32_t>> documents,
                              int order) {
    check_order(order);
    FreqTable table;
    table.order = order;
    for (const auto& doc : documents) {
        if (doc.size() < static_cast<std::size_t>(order)) continue;
        for (std::size_t t = order - 1; t < doc.size(); ++t) {
            NgramKey k = NgramKey::pack(
                std::span<const std::uint32_t>(doc).subspan(t + 1 - order, order));
            ++table.counts[k.packed];
            ++table.total_positions;
        }
    }
    return table;
}

std::vector<FreqTable> count_ngrams(const Corpus& corpus, std::span<const int> orders) {
    std::vector<FreqTable> tables;
    tables.reserve(orders.size());
    for (int order : orders)
        tables.push_back(count_ngrams_single(corpus.documents, order));
    return tables;
}

HotSet select_hot(const FreqTable& freq, std::uint32_t n_hot) {
    if (n_hot < 1) throw InputError("select_hot: n_hot must be >= 1");

    std::vector<std::pair<std::uint64_t, std::uint64_t>> entries(freq.counts.begin(),
                                                                 freq.counts.end());
    // descending count, ties by ascending packed value
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (entries.size() > n_hot) entries.resize(n_hot);

    HotSet hot;
    hot.order = freq.order;
    hot.n_hot = n_hot;
    hot.packed.reserve(entries.size());
    hot.counts.reserve(entries.size());
    for (const auto& [packed, count] : entries) {
        hot.packed.push_back(packed);
        hot.counts.push_back(count);
    }
    return hot;
}

double coverage(const FreqTable& freq, const HotSet& hot) {
    if (hot.order != freq.order) throw InputError("coverage: order mismatch");
    if (freq.total_positions == 0)
        throw EvaluationError("coverage undefined: total_positions is zero");
    std::uint64_t covered = 0;
    for (std::uint64_t count : hot.counts) covered += count;
    return static_cast<double>(covered) / static_cast<double>(freq.total_positions);
}

// ---------------------------------------------------------------------------
// Corpus file: u32 little-endian token ids, documents separated by 0xFFFFFFFF.

std::uint64_t Corpus::total_tokens() const {
    std::uint64_t n = 0;
    for (const auto& doc : documents) n += doc.size();
    return n;
}

Corpus Corpus::load(const std::filesystem::path& path) {
    auto raw = read_file(path);
    if (raw.size() % 4 != 0)
        throw FormatError("corpus file size not a multiple of 4: " + path.string());
    Corpus corpus;
    std::vector<std::uint32_t> doc;
    for (std::size_t i = 0; i < raw.size(); i += 4) {
        std::uint32_t v = static_cast<std::uint32_t>(raw[i]) |
                          (static_cast<std::uint32_t>(raw[i + 1]) << 8) |
                          (static_cast<std::uint32_t>(raw[i + 2]) << 16) |
                          (static_cast<std::uint32_t>(raw[i + 3]) << 24);
        if (v == kDocSeparator) {
            if (!doc.empty()) corpus.documents.push_back(std::move(doc));
            doc.clear();
        } else {
            doc.push_back(v);
        }
    }
    if (!doc.empty()) corpus.documents.push_back(std::move(doc));
    return corpus;
}

void Corpus::save(const std::filesystem::path& path) const {
    BinaryWriter w;
    for (std::size_t d = 0; d < documents.size(); ++d) {
        if (d > 0) w.u32(kDocSeparator);
        for (std::uint32_t tok : documents[d]) w.u32(tok);
    }
    write_file(path, w.buffer());
}

// ---------------------------------------------------------------------------
// FreqTable file: magic "ENFQ", version u16, order u8, then (packed u64,
// count u64) pairs sorted by packed value.

void FreqTable::save(const std::filesystem::path& path) const {
    BinaryWriter w;
    w.magic("ENFQ");
    w.u16(kFreqVersion);
    w.u8(static_cast<std::uint8_t>(order));
    std::vector<std::pair<std::uint64_t, std::uint64_t>> entries(counts.begin(),
                                                                 counts.end());
    std::sort(entries.begin(), entries.end());
    for (const auto& [packed, count] : entries) {
        w.u64(packed);
        w.u64(count);
    }
    write_file(path, w.buffer());
}

FreqTable FreqTable::load(const std::filesystem::path& path) {
    auto raw = read_file(path);
    BinaryReader r(raw);
    r.expect_magic("ENFQ");
    std::uint16_t version = r.u16();
    if (version != kFreqVersion)
        throw FormatError("unsupported ENFQ version " + std::to_string(version));
    FreqTable table;
    table.order = r.u8();
    check_order(table.order);
    if (r.remaining() % 16 != 0) throw FormatError("truncated ENFQ payload");
    std::size_t n = r.remaining() / 16;
    table.counts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t packed = r.u64();
        std::uint64_t count = r.u64();
        if (count == 0) throw FormatError("ENFQ entry with zero count");
        table.counts.emplace(packed, count);
        table.total_positions += count;
    }
    return table;
}

// ---------------------------------------------------------------------------
// HotSet file: magic "ENHS", version u16, order u8, n_hot u32, then packed
// u64 array in rank order, then count u64 array. The stored key count is
// implied by the payload size (it may be smaller than n_hot).

void HotSet::save(const std::filesystem::path& path) const {
    BinaryWriter w;
    w.magic("ENHS");
    w.u16(kHotVersion);
    w.u8(static_cast<std::uint8_t>(order));
    w.u32(n_hot);
    for (std::uint64_t p : packed) w.u64(p);
    for (std::uint64_t c : counts) w.u64(c);
    write_file(path, w.buffer());
}

HotSet HotSet::load(const std::filesystem::path& path) {
    auto raw = read_file(path);
    BinaryReader r(raw);
    r.expect_magic("ENHS");
    std::uint16_t version = r.u16();
    if (version != kHotVersion)
        throw FormatError("unsupported ENHS version " + std::to_string(version));
    HotSet hot;
    hot.order = r.u8();
    check_order(hot.order);
    hot.n_hot = r.u32();
    if (r.remaining() % 16 != 0) throw FormatError("truncated ENHS payload");
    std::size_t n = r.remaining() / 16;
    hot.packed.resize(n);
    hot.counts.resize(n);
    for (std::size_t i = 0; i < n; ++i) hot.packed[i] = r.u64();
    for (std::size_t i = 0; i < n; ++i) hot.counts[i] = r.u64();
    for (std::size_t i = 1; i < n; ++i) {
        if (hot.counts[i] > hot.counts[i - 1])
            throw FormatError("ENHS counts not non-increasing");
    }
    return hot;
}

std::vector<std::string> load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocab file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("vocab file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_array()) throw FormatError("vocab file must be a JSON array of strings");
    std::vector<std::string> vocab;
    vocab.reserve(j.size());
    for (const auto& item : j) {
        if (!item.is_string()) throw FormatError("vocab entries must be strings");
        vocab.push_back(item.get<std::string>());
    }
    return vocab;
}

}  // namespace engram
