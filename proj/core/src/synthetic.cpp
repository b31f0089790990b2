#include "engram/synthetic.hpp"

#include <cmath>
#include <vector>

#include "engram/rng.hpp"

namespace engram {

namespace {

Corpus chunk_into_documents(std::vector<std::uint32_t> stream, std::uint64_t doc_len) {
    Corpus corpus;
    for (std::size_t i = 0; i < stream.size(); i += doc_len) {
        std::size_t end = std::min(stream.size(), i + doc_len);
        corpus.documents.emplace_back(stream.begin() + i, stream.begin() + end);
    }
    return corpus;
}

}  // namespace

Corpus make_zipf_corpus(std::uint32_t vocab_size, std::uint64_t n_tokens,
                        double exponent, std::uint64_t seed, std::uint64_t doc_len) {
    std::vector<double> cdf(vocab_size);
    double acc = 0.0;
    for (std::uint32_t r = 0; r < vocab_size; ++r) {
        acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
        cdf[r] = acc;
    }
    for (double& v : cdf) v /= acc;

    Rng rng(seed);
    std::vector<std::uint32_t> stream(n_tokens);
    for (auto& tok : stream) {
        double u = rng.next_double();
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        tok = static_cast<std::uint32_t>(it - cdf.begin());
        if (tok >= vocab_size) tok = vocab_size - 1;
    }
    return chunk_into_documents(std::move(stream), doc_len);
}

Corpus make_uniform_corpus(std::uint32_t vocab_size, std::uint64_t n_tokens,
                           std::uint64_t seed, std::uint64_t doc_len) {
    Rng rng(seed);
    std::vector<std::uint32_t> stream(n_tokens);
    for (auto& tok : stream)
        tok = static_cast<std::uint32_t>(rng.next_below(vocab_size));
    return chunk_into_documents(std::move(stream), doc_len);
}

Corpus make_hot_cold_corpus(std::uint64_t n_tokens, std::uint64_t seed,
                            double exit_prob, std::uint64_t doc_len) {
    Rng rng(seed);
    std::vector<std::uint32_t> stream;
    stream.reserve(n_tokens);
    auto uniform16 = [&rng]() {
        return static_cast<std::uint32_t>(rng.next_below(16));
    };
    stream.push_back(uniform16());
    stream.push_back(uniform16());
    while (stream.size() < n_tokens) {
        std::uint32_t a = stream[stream.size() - 2];
        std::uint32_t b = stream[stream.size() - 1];
        std::uint32_t next;
        bool cycle_pair = a < 8 && b < 8 && b == (a + 1) % 8;
        if (cycle_pair) {
            if (a == 6 && b == 7 && rng.next_double() < exit_prob)
                next = uniform16();
            else
                next = (b + 1) % 8;
        } else {
            next = uniform16();
        }
        stream.push_back(next);
    }
    return chunk_into_documents(std::move(stream), doc_len);
}

}  // namespace engram
