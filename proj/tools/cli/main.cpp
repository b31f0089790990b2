// Operator surface for the two-tier n-gram memory lab. Pipeline order:
//
//   engram count      --config cfg.json      # n-gram frequency tables
//   engram select-hot --config cfg.json      # top-N hot sets + coverage
//   engram build-mphf --config cfg.json      # perfect-hash + fingerprint files
//   engram train      --config cfg.json --mode two_tier
//   engram eval       <run_dir>
//   engram report     <run_dir>... --out report/
//   engram bench      --config cfg.json
//
// Exit codes: 0 ok, 2 usage, 3 input/format, 4 invariant violation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "engram/config.hpp"
#include "engram/memory.hpp"
#include "engram/report.hpp"
#include "engram/synthetic.hpp"
#include "engram/trainer.hpp"

namespace fs = std::filesystem;
using namespace engram;

namespace {

CanonicalMap make_canonical_map(const RunConfig& cfg) {
    if (cfg.paths.vocab.empty())
        return CanonicalMap::identity(static_cast<std::uint32_t>(cfg.backbone.vocab_size));
    std::vector<std::string> vocab = load_vocab(cfg.paths.vocab);
    if (vocab.size() != static_cast<std::size_t>(cfg.backbone.vocab_size))
        throw InputError("vocab file has " + std::to_string(vocab.size()) +
                         " entries but backbone.vocab_size is " +
                         std::to_string(cfg.backbone.vocab_size));
    return CanonicalMap::build(vocab, cfg.canonical_rules);
}

std::vector<FreqTable> load_freq_tables(const RunConfig& cfg) {
    std::vector<FreqTable> tables;
    for (int order : cfg.tier.orders) {
        fs::path p = cfg.freq_path(order);
        if (!fs::exists(p))
            throw IoError("missing artifact " + p.string() + " (run `engram count` first)");
        tables.push_back(FreqTable::load(p));
    }
    return tables;
}

std::vector<HotSet> load_hot_sets(const RunConfig& cfg) {
    std::vector<HotSet> hot_sets;
    for (int order : cfg.tier.orders) {
        fs::path p = cfg.hot_path(order);
        if (!fs::exists(p))
            throw IoError("missing artifact " + p.string() +
                          " (run `engram select-hot` first)");
        hot_sets.push_back(HotSet::load(p));
    }
    return hot_sets;
}

MemoryStore<float> build_store_from_artifacts(const RunConfig& cfg,
                                              const std::vector<HotSet>& hot_sets,
                                              TierMode mode) {
    TierConfig tier = cfg.tier;
    tier.mode = mode;
    HashHeadFamily family =
        HashHeadFamily::derive(cfg.seeds.hash_family, cfg.max_order(), tier.heads_k);
    MphfBuildOptions opts{cfg.mphf_gamma, cfg.mphf_max_levels, cfg.seeds.mphf_levels};
    MemoryStore<float> store = build_store<float>(hot_sets, tier, cfg.init_seed(), family,
                                                  cfg.seeds.fingerprint, opts);
    if (mode == TierMode::two_tier) {
        // use the artifacts written by build-mphf; verification below catches
        // stale pairs
        for (std::size_t oi = 0; oi < tier.orders.size(); ++oi) {
            int order = tier.orders[oi];
            fs::path mp = cfg.mphf_path(order);
            fs::path fp = cfg.fp_path(order);
            if (!fs::exists(mp) || !fs::exists(fp))
                throw IoError("missing MPHF artifacts for order " + std::to_string(order) +
                              " (run `engram build-mphf` first)");
            store.mphfs[oi] = Mphf::load(mp);
            auto raw = read_file(fp);
            BinaryReader r(raw);
            r.expect_magic("ENFP");
            std::uint16_t version = r.u16();
            if (version != 1)
                throw FormatError("unsupported ENFP version " + std::to_string(version));
            int file_order = r.u8();
            if (file_order != order) throw FormatError("ENFP order mismatch");
            std::uint64_t n = r.u64();
            store.fp_tables[oi].resize(n);
            for (auto& v : store.fp_tables[oi]) v = r.u32();
        }
        verify_store_membership(store, hot_sets);
    }
    return store;
}

int cmd_count(const RunConfig& cfg) {
    Corpus corpus = Corpus::load(cfg.paths.corpus);
    CanonicalMap map = make_canonical_map(cfg);
    Corpus canonical;
    canonical.documents.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents)
        canonical.documents.push_back(canonicalize(doc, map));

    if (map.canonical_size > kMaxCanonicalIds)
        throw InputError("canonical vocabulary exceeds 20-bit key capacity");

    auto tables = count_ngrams(canonical, cfg.tier.orders);
    for (const FreqTable& table : tables) {
        fs::path p = cfg.freq_path(table.order);
        table.save(p);
        write_artifact_meta(p, cfg);
        std::cout << "order " << table.order << ": " << table.counts.size()
                  << " distinct n-grams over " << table.total_positions
                  << " positions -> " << p.string() << "\n";
    }
    return 0;
}

int cmd_select_hot(const RunConfig& cfg) {
    auto tables = load_freq_tables(cfg);
    for (std::size_t oi = 0; oi < tables.size(); ++oi) {
        std::uint64_t n_hot = cfg.tier.mode == TierMode::two_tier
                                  ? cfg.tier.n_hot[oi]
                                  : (cfg.tier.n_hot.empty() ? 0 : cfg.tier.n_hot[oi]);
        if (n_hot == 0)
            throw UsageError("select-hot: tier.n_hot not configured for order " +
                             std::to_string(tables[oi].order));
        HotSet hot = select_hot(tables[oi], static_cast<std::uint32_t>(n_hot));
        fs::path p = cfg.hot_path(hot.order);
        hot.save(p);
        write_artifact_meta(p, cfg);
        std::cout << "order " << hot.order << ": kept " << hot.size() << " of "
                  << tables[oi].counts.size() << " keys, coverage "
                  << coverage(tables[oi], hot) << " -> " << p.string() << "\n";
    }
    return 0;
}

int cmd_build_mphf(const RunConfig& cfg) {
    auto hot_sets = load_hot_sets(cfg);
    for (const HotSet& hot : hot_sets) {
        std::vector<NgramKey> keys(hot.size());
        for (std::size_t i = 0; i < hot.size(); ++i) keys[i] = hot.key(i);
        Mphf mphf = Mphf::build(keys, cfg.mphf_gamma, cfg.mphf_max_levels,
                                mix_seed(cfg.seeds.mphf_levels, hot.order));
        fs::path mp = cfg.mphf_path(hot.order);
        mphf.save(mp);
        write_artifact_meta(mp, cfg);

        BinaryWriter w;
        w.magic("ENFP");
        w.u16(1);
        w.u8(static_cast<std::uint8_t>(hot.order));
        w.u64(keys.size());
        std::vector<std::uint32_t> fp_table(keys.size());
        for (const NgramKey& key : keys)
            fp_table[mphf.query(key)] = fingerprint(key, cfg.seeds.fingerprint);
        for (std::uint32_t fp : fp_table) w.u32(fp);
        fs::path fpp = cfg.fp_path(hot.order);
        write_file(fpp, w.buffer());
        write_artifact_meta(fpp, cfg);

        auto stats = mphf.stats();
        std::cout << "order " << hot.order << ": mphf over " << stats.n_keys
                  << " keys, " << stats.levels_used << " levels, "
                  << stats.fallback_keys << " fallback, " << stats.bits_per_key
                  << " bits/key -> " << mp.string() << "\n";
    }
    return 0;
}

void check_iso_budget(const RunConfig& cfg) {
    if (!cfg.iso_nominal_budget.has_value()) return;
    ParamCount pc = param_count(cfg.tier);
    if (pc.total_nominal != *cfg.iso_nominal_budget)
        throw InvariantError(
            "iso-parameter refusal: nominal embedding total " +
            std::to_string(pc.total_nominal) + " != declared budget " +
            std::to_string(*cfg.iso_nominal_budget));
}

int cmd_train(const RunConfig& cfg, const std::string& out_dir,
              const std::string& resume, int stop_after) {
    check_iso_budget(cfg);
    Corpus corpus = Corpus::load(cfg.paths.corpus);
    CanonicalMap map = make_canonical_map(cfg);
    auto hot_sets = load_hot_sets(cfg);
    TrainData data = TrainData::prepare(corpus, map, cfg.tier.orders);
    MemoryStore<float> store = build_store_from_artifacts(cfg, hot_sets, cfg.tier.mode);

    fs::path run_dir = out_dir.empty() ? cfg.runs_dir() / cfg.run_name() : fs::path(out_dir);
    Trainer trainer(cfg, std::move(data), std::move(store), std::move(hot_sets));
    if (!resume.empty()) trainer.load_checkpoint(resume);

    ParamCount pc = param_count(cfg.tier);
    std::cout << "run " << run_dir.string() << " (" << tier_mode_name(cfg.tier.mode)
              << ", nominal embedding params " << pc.total_nominal << ", actual "
              << pc.total_actual << ")\n";
    TrainSummary summary = trainer.run(run_dir, stop_after);
    std::cout << "finished at step " << trainer.current_step() << ", "
              << summary.evals_written << " evals, mean throughput "
              << summary.mean_tokens_per_sec << " tok/s\n";
    return 0;
}

int cmd_eval(const std::string& run_dir_arg) {
    fs::path run_dir(run_dir_arg);
    RunConfig cfg = RunConfig::load(run_dir / "config.json");

    std::optional<fs::path> latest;
    int latest_step = -1;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        std::string name = entry.path().filename().string();
        int step = 0;
        if (std::sscanf(name.c_str(), "ckpt_%d.enck", &step) == 1 && step > latest_step) {
            latest_step = step;
            latest = entry.path();
        }
    }
    if (!latest.has_value())
        throw IoError("no checkpoint found in " + run_dir.string());

    Corpus corpus = Corpus::load(cfg.paths.corpus);
    CanonicalMap map = make_canonical_map(cfg);
    auto hot_sets = load_hot_sets(cfg);
    TrainData data = TrainData::prepare(corpus, map, cfg.tier.orders);
    MemoryStore<float> store = build_store_from_artifacts(cfg, hot_sets, cfg.tier.mode);
    Trainer trainer(cfg, std::move(data), std::move(store), std::move(hot_sets));
    trainer.load_checkpoint(*latest);
    MetricsRow row = trainer.evaluate(latest_step);
    std::cout << row.to_json().dump() << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
               int window) {
    if (run_dirs.empty()) throw UsageError("report: need at least one run directory");
    std::vector<RunLog> logs;
    for (const std::string& dir : run_dirs) logs.push_back(RunLog::load(dir));
    if (window <= 0) window = logs.front().config.flip_window;
    ReportFiles files = emit_report(logs, window, out_dir);
    std::cout << "report -> " << files.summary.string() << " (+" << files.csv.size()
              << " csv files)\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, int repetitions) {
    Corpus corpus = Corpus::load(cfg.paths.corpus);
    CanonicalMap map = make_canonical_map(cfg);
    auto hot_sets = load_hot_sets(cfg);
    TrainData data = TrainData::prepare(corpus, map, cfg.tier.orders);

    MemoryStore<float> two_tier =
        build_store_from_artifacts(cfg, hot_sets, TierMode::two_tier);
    MemoryStore<float> hash_only =
        build_store_from_artifacts(cfg, hot_sets, TierMode::hash_only);

    std::size_t stream_len = std::min<std::size_t>(data.size(), 200000);
    std::vector<std::vector<std::optional<NgramKey>>> stream(stream_len);
    for (std::size_t t = 0; t < stream_len; ++t) {
        stream[t].resize(cfg.tier.orders.size());
        for (std::size_t oi = 0; oi < cfg.tier.orders.size(); ++oi)
            stream[t][oi] = data.keys_per_order[oi][t];
    }
    if (repetitions < 1)
        repetitions = static_cast<int>(std::max<std::size_t>(1, 2000000 / stream_len));

    BenchResult r = bench_lookup(hash_only, two_tier, stream, repetitions);
    std::printf("lookup throughput over %llu positions x %d reps\n",
                static_cast<unsigned long long>(r.stream_size), r.repetitions);
    std::printf("  hash_only : %12.0f lookups/s\n", r.hash_only_lookups_per_sec);
    std::printf("  two_tier  : %12.0f lookups/s\n", r.two_tier_lookups_per_sec);
    std::printf("  ratio     : %.4f (two_tier / hash_only, overhead %.1f%%)\n", r.ratio,
                (1.0 - r.ratio) * 100.0);
    std::printf("  hot-route fraction of stream: %.4f\n", r.hot_route_fraction);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-tier hashed n-gram memory laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string mode_override;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::uint64_t> n_hot_override;
    std::optional<std::uint64_t> cold_slots_override;
    std::string out_dir;
    std::string resume_path;
    int stop_after = 0;
    int window = 0;
    int repetitions = 0;
    std::vector<std::string> run_dirs;

    auto add_config_opt = [&](CLI::App* sub, bool with_overrides = true) {
        sub->add_option("--config", config_path, "run configuration JSON")->required();
        if (with_overrides) {
            sub->add_option("--seed", seed_override, "override train.seed");
            sub->add_option("--n-hot", n_hot_override,
                            "override tier.n_hot (all orders)");
            sub->add_option("--cold-slots", cold_slots_override,
                            "override tier.cold_slots (all orders)");
        }
    };

    CLI::App* count = app.add_subcommand("count", "count n-gram frequencies");
    add_config_opt(count);
    CLI::App* select = app.add_subcommand("select-hot", "select top-N hot sets");
    add_config_opt(select);
    CLI::App* build = app.add_subcommand("build-mphf", "build perfect-hash artifacts");
    add_config_opt(build);

    CLI::App* train = app.add_subcommand("train", "train a model");
    add_config_opt(train);
    train->add_option("--mode", mode_override, "hash_only or two_tier")->required();
    train->add_option("--out", out_dir, "run directory (default: runs/<name>)");
    train->add_option("--resume", resume_path, "resume from an ENCK checkpoint");
    train->add_option("--stop-after", stop_after, "stop after this step (for testing)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate the latest checkpoint");
    eval->add_option("run_dir", run_dirs, "run directory")->expected(1);

    CLI::App* report = app.add_subcommand("report", "summarize finished runs");
    report->add_option("run_dirs", run_dirs, "run directories")->expected(-1);
    report->add_option("--out", out_dir, "output directory")->default_val("report");
    report->add_option("--window", window, "flip persistence window override");

    CLI::App* bench = app.add_subcommand("bench", "lookup throughput comparison");
    add_config_opt(bench);
    bench->add_option("--reps", repetitions, "stream repetitions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg;
        bool needs_config = !config_path.empty();
        if (needs_config) {
            cfg = RunConfig::load(config_path);
            if (seed_override) cfg.train.seed = *seed_override;
            if (n_hot_override)
                cfg.tier.n_hot.assign(cfg.tier.orders.size(), *n_hot_override);
            if (cold_slots_override)
                cfg.tier.cold_slots.assign(cfg.tier.orders.size(), *cold_slots_override);
            if (!mode_override.empty()) cfg.tier.mode = parse_tier_mode(mode_override);
            cfg.backbone.init_seed = cfg.init_seed();
            cfg.validate();
        }

        if (count->parsed()) return cmd_count(cfg);
        if (select->parsed()) return cmd_select_hot(cfg);
        if (build->parsed()) return cmd_build_mphf(cfg);
        if (train->parsed()) return cmd_train(cfg, out_dir, resume_path, stop_after);
        if (eval->parsed()) return cmd_eval(run_dirs.at(0));
        if (report->parsed()) return cmd_report(run_dirs, out_dir, window);
        if (bench->parsed()) return cmd_bench(cfg, repetitions);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 4;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
