// End-to-end exercise of the command line surface against a generated toy
// corpus: count -> select-hot -> build-mphf -> train -> eval -> report ->
// bench, plus the error paths and exit codes.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "engram/io.hpp"
#include "engram/synthetic.hpp"

using namespace engram;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(ENGRAM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct CliWorkspace {
    fs::path root;
    fs::path config;

    CliWorkspace() {
        root = fs::temp_directory_path() / "engram_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);

        Corpus corpus = make_zipf_corpus(64, 60000, 1.0, 11, 6000);
        corpus.save(root / "corpus.bin");

        nlohmann::ordered_json j;
        j["paths"] = {{"corpus", (root / "corpus.bin").string()},
                      {"vocab", ""},
                      {"artifacts_dir", (root / "artifacts").string()}};
        j["backbone"] = {{"vocab_size", 64},   {"d_model", 32}, {"n_layers", 2},
                         {"n_heads", 2},       {"seq_len", 32}, {"engram_layers", {1}}};
        j["tier"] = {{"orders", {2, 3}},  {"heads_k", 2},      {"head_dim", 4},
                     {"n_hot", 50},       {"cold_slots", 503}, {"mode", "two_tier"}};
        j["train"] = {{"total_steps", 6},   {"warmup_steps", 2}, {"batch_size", 2},
                      {"grad_accum", 1},    {"eval_interval", 3}, {"eval_iters", 2},
                      {"seed", 0}};
        config = root / "config.json";
        std::ofstream out(config);
        out << j.dump(2);
    }
};

}  // namespace

TEST_CASE("full pipeline chain with determinism and error paths") {
    CliWorkspace ws;
    std::string cfg = "--config " + ws.config.string();

    // dependency order is enforced
    CHECK(run_cli("select-hot " + cfg) == 3);
    CHECK(run_cli("build-mphf " + cfg) == 3);

    REQUIRE(run_cli("count " + cfg) == 0);
    CHECK(fs::exists(ws.root / "artifacts" / "freq_o2.enfq"));
    CHECK(fs::exists(ws.root / "artifacts" / "freq_o2.enfq.meta.json"));
    CHECK(fs::exists(ws.root / "artifacts" / "freq_o3.enfq"));

    // rerun with unchanged inputs is byte-identical
    auto freq_bytes = read_file(ws.root / "artifacts" / "freq_o2.enfq");
    REQUIRE(run_cli("count " + cfg) == 0);
    CHECK(read_file(ws.root / "artifacts" / "freq_o2.enfq") == freq_bytes);

    REQUIRE(run_cli("select-hot " + cfg) == 0);
    CHECK(fs::exists(ws.root / "artifacts" / "hot_o2.enhs"));
    REQUIRE(run_cli("build-mphf " + cfg) == 0);
    CHECK(fs::exists(ws.root / "artifacts" / "mphf_o2.enph"));
    CHECK(fs::exists(ws.root / "artifacts" / "fp_o2.enfp"));

    // artifacts round-trip through their deserializers
    CHECK_NOTHROW(FreqTable::load(ws.root / "artifacts" / "freq_o2.enfq"));
    CHECK_NOTHROW(HotSet::load(ws.root / "artifacts" / "hot_o3.enhs"));

    // --mode is required
    CHECK(run_cli("train " + cfg) == 2);

    fs::path run_two = ws.root / "run_two";
    REQUIRE(run_cli("train " + cfg + " --mode two_tier --out " + run_two.string()) == 0);
    CHECK(fs::exists(run_two / "metrics.jsonl"));
    CHECK(fs::exists(run_two / "config.json"));
    CHECK(fs::exists(run_two / "ckpt_000006.enck"));

    fs::path run_hash = ws.root / "run_hash";
    REQUIRE(run_cli("train " + cfg + " --mode hash_only --out " + run_hash.string()) == 0);

    CHECK(run_cli("eval " + run_two.string()) == 0);

    fs::path report_dir = ws.root / "report";
    REQUIRE(run_cli("report " + run_two.string() + " " + run_hash.string() + " --out " +
                    report_dir.string()) == 0);
    CHECK(fs::exists(report_dir / "report.txt"));
    CHECK(fs::exists(report_dir / "delta_vs_step.csv"));
    CHECK(fs::exists(report_dir / "buckets_final.csv"));

    CHECK(run_cli("report") == 2);  // zero run dirs is a usage error

    CHECK(run_cli("bench " + cfg + " --reps 2") == 0);

    // same-seed retrain into a second directory is byte-identical
    fs::path run_again = ws.root / "run_two_again";
    REQUIRE(run_cli("train " + cfg + " --mode two_tier --out " + run_again.string()) == 0);
    CHECK(read_file(run_two / "metrics.jsonl") == read_file(run_again / "metrics.jsonl"));
}

TEST_CASE("iso-parameter refusal") {
    CliWorkspace ws;
    // declared budget: 2 orders x 2 heads x 503 x 4 = 16096 for the hash side;
    // the two_tier side adds hot params on top, so the pair cannot match
    auto j = nlohmann::json::parse(std::ifstream(ws.config));
    j["iso_nominal_budget"] = 16096;
    std::ofstream(ws.config) << j.dump(2);

    std::string cfg = "--config " + ws.config.string();
    REQUIRE(run_cli("count " + cfg) == 0);
    REQUIRE(run_cli("select-hot " + cfg) == 0);
    REQUIRE(run_cli("build-mphf " + cfg) == 0);
    CHECK(run_cli("train " + cfg + " --mode hash_only --out " +
                  (ws.root / "ok").string()) == 0);
    CHECK(run_cli("train " + cfg + " --mode two_tier --out " +
                  (ws.root / "refused").string()) == 4);
}

TEST_CASE("missing and malformed inputs map to exit code 3") {
    CliWorkspace ws;
    CHECK(run_cli("count --config /nonexistent/config.json") == 3);

    fs::path bad = ws.root / "bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK(run_cli("count --config " + bad.string()) == 3);
}
