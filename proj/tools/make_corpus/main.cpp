// Writes deterministic toy corpora in the binary corpus format (u32 LE token
// ids, documents separated by 0xFFFFFFFF). Optionally emits a matching JSON
// vocabulary of synthetic token strings.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "engram/synthetic.hpp"

using namespace engram;

int main(int argc, char** argv) {
    CLI::App app{"toy corpus generator"};
    std::string kind = "zipf";
    std::string out_path;
    std::string vocab_out;
    std::uint64_t n_tokens = 1000000;
    std::uint32_t vocab_size = 4096;
    std::uint64_t seed = 7;
    std::uint64_t doc_len = 4096;
    double zipf_exponent = 1.0;
    double exit_prob = 0.1;

    app.add_option("--kind", kind, "zipf | uniform | hotcold")
        ->check(CLI::IsMember({"zipf", "uniform", "hotcold"}));
    app.add_option("--out", out_path, "output corpus file")->required();
    app.add_option("--tokens", n_tokens, "token count");
    app.add_option("--vocab", vocab_size, "vocabulary size (zipf/uniform)");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--doc-len", doc_len, "document length");
    app.add_option("--zipf-exponent", zipf_exponent, "zipf exponent");
    app.add_option("--exit-prob", exit_prob, "hotcold cycle exit probability");
    app.add_option("--vocab-out", vocab_out, "also write a JSON vocabulary here");
    CLI11_PARSE(app, argc, argv);

    try {
        Corpus corpus;
        if (kind == "zipf") {
            corpus = make_zipf_corpus(vocab_size, n_tokens, zipf_exponent, seed, doc_len);
        } else if (kind == "uniform") {
            corpus = make_uniform_corpus(vocab_size, n_tokens, seed, doc_len);
        } else {
            corpus = make_hot_cold_corpus(n_tokens, seed, exit_prob, doc_len);
            vocab_size = 16;
        }
        corpus.save(out_path);
        std::cout << "wrote " << corpus.total_tokens() << " tokens in "
                  << corpus.documents.size() << " documents to " << out_path << "\n";

        if (!vocab_out.empty()) {
            nlohmann::json vocab = nlohmann::json::array();
            for (std::uint32_t i = 0; i < vocab_size; ++i)
                vocab.push_back("tok" + std::to_string(i));
            std::ofstream out(vocab_out);
            out << vocab.dump() << "\n";
            std::cout << "wrote " << vocab_size << "-entry vocab to " << vocab_out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
