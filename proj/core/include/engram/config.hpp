#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "engram/backbone.hpp"
#include "engram/memory.hpp"
#include "engram/ngram.hpp"

namespace engram {

struct TrainConfig {
    double lr_max = 6e-4;
    double lr_min = 6e-5;
    int warmup_steps = 100;
    int total_steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    int batch_size = 4;
    int grad_accum = 1;
    int eval_interval = 250;
    int eval_iters = 100;
    std::uint64_t seed = 0;  // run seed; offsets the data/init seed streams

    void validate() const {
        if (lr_max <= 0 || lr_min <= 0 || lr_min > lr_max)
            throw UsageError("train config: need 0 < lr_min <= lr_max");
        if (warmup_steps < 1 || total_steps < 1 || warmup_steps >= total_steps)
            throw UsageError("train config: need 0 < warmup_steps < total_steps");
        if (batch_size < 1 || grad_accum < 1 || eval_interval < 1 || eval_iters < 1)
            throw UsageError("train config: batch/accum/eval settings must be positive");
    }
};

// Linear warmup to lr_max over warmup_steps, then cosine decay to lr_min at
// total_steps, flat afterwards. Step indices are 1-based (first update = 1).
double learning_rate_at(const TrainConfig& cfg, int step);

enum class MaskRule { any_order, all_orders, per_order };

MaskRule parse_mask_rule(const std::string& name);
std::string mask_rule_name(MaskRule rule);

struct RunPaths {
    std::string corpus;
    std::string vocab;          // optional; empty = identity map over vocab_size
    std::string artifacts_dir = "artifacts";
};

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t init = 2;
    std::uint64_t hash_family = 3;
    std::uint64_t fingerprint = 4;
    std::uint64_t mphf_levels = 5;
};

// The single JSON document driving every subcommand. Echoed verbatim into run
// directories; its FNV hash is recorded next to every binary artifact.
struct RunConfig {
    RunPaths paths;
    BackboneConfig backbone;
    TierConfig tier;
    TrainConfig train;
    std::vector<CanonicalRule> canonical_rules;
    MaskRule mask_rule = MaskRule::any_order;
    int mask_rule_order = 2;  // used when mask_rule == per_order
    Seeds seeds;
    std::optional<std::uint64_t> iso_nominal_budget;
    double mphf_gamma = 2.0;
    int mphf_max_levels = 16;
    int flip_window = 2;

    void validate() const;

    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::string canonical_dump() const { return to_json().dump(2); }
    std::uint64_t config_hash() const { return fnv1a64(canonical_dump()); }

    // Seed streams offset by the run seed so --seed N sweeps everything that
    // should vary while hashing/fingerprints stay pinned.
    std::uint64_t data_seed() const { return mix_seed(seeds.data, train.seed); }
    std::uint64_t init_seed() const { return mix_seed(seeds.init, train.seed); }

    int max_order() const {
        int m = 0;
        for (int o : tier.orders) m = std::max(m, o);
        return m;
    }

    // Paper-style run directory name, e.g. "hash-500k-seed0", "nine-100k-400k-seed0".
    std::string run_name() const;

    std::filesystem::path freq_path(int order) const;
    std::filesystem::path hot_path(int order) const;
    std::filesystem::path mphf_path(int order) const;
    std::filesystem::path fp_path(int order) const;
    std::filesystem::path runs_dir() const;
};

// Sidecar metadata written next to each binary artifact: the producing
// config's hash and echo. The binary formats themselves stay fixed.
void write_artifact_meta(const std::filesystem::path& artifact_path,
                         const RunConfig& cfg);

}  // namespace engram
