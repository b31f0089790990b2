#include "engram/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace engram {

double learning_rate_at(const TrainConfig& cfg, int step) {
    if (step <= cfg.warmup_steps)
        return cfg.lr_max * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    if (step >= cfg.total_steps) return cfg.lr_min;
    double progress = static_cast<double>(step - cfg.warmup_steps) /
                      static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    double cosine = 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * cosine;
}

MaskRule parse_mask_rule(const std::string& name) {
    if (name == "any_order") return MaskRule::any_order;
    if (name == "all_orders") return MaskRule::all_orders;
    if (name == "per_order") return MaskRule::per_order;
    throw UsageError("unknown hot-mask rule: " + name);
}

std::string mask_rule_name(MaskRule rule) {
    switch (rule) {
        case MaskRule::any_order: return "any_order";
        case MaskRule::all_orders: return "all_orders";
        case MaskRule::per_order: return "per_order";
    }
    return "any_order";
}

void RunConfig::validate() const {
    tier.validate();
    train.validate();
    backbone.validate(max_order());
    if (backbone.d_model < 1) throw UsageError("config: backbone.d_model missing");
    if (mask_rule == MaskRule::per_order) {
        bool found = false;
        for (int o : tier.orders) found = found || o == mask_rule_order;
        if (!found)
            throw UsageError("config: per_order mask rule names an unconfigured order");
    }
    if (paths.corpus.empty()) throw UsageError("config: paths.corpus is required");
    if (mphf_gamma < 1.0) throw UsageError("config: mphf_gamma must be >= 1.0");
    if (flip_window < 1) throw UsageError("config: flip_window must be >= 1");
}

namespace {

std::string human_count(std::uint64_t n) {
    if (n >= 1000000 && n % 1000000 == 0) return std::to_string(n / 1000000) + "m";
    if (n >= 1000 && n % 1000 == 0) return std::to_string(n / 1000) + "k";
    return std::to_string(n);
}

std::string joined_counts(const std::vector<std::uint64_t>& values) {
    bool uniform = true;
    for (std::uint64_t v : values) uniform = uniform && v == values.front();
    if (uniform) return human_count(values.front());
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += "+";
        out += human_count(values[i]);
    }
    return out;
}

}  // namespace

std::string RunConfig::run_name() const {
    std::string name;
    if (tier.mode == TierMode::hash_only) {
        name = "hash-" + joined_counts(tier.cold_slots);
    } else {
        name = "nine-" + joined_counts(tier.n_hot) + "-" + joined_counts(tier.cold_slots);
    }
    return name + "-seed" + std::to_string(train.seed);
}

std::filesystem::path RunConfig::freq_path(int order) const {
    return std::filesystem::path(paths.artifacts_dir) /
           ("freq_o" + std::to_string(order) + ".enfq");
}
std::filesystem::path RunConfig::hot_path(int order) const {
    return std::filesystem::path(paths.artifacts_dir) /
           ("hot_o" + std::to_string(order) + ".enhs");
}
std::filesystem::path RunConfig::mphf_path(int order) const {
    return std::filesystem::path(paths.artifacts_dir) /
           ("mphf_o" + std::to_string(order) + ".enph");
}
std::filesystem::path RunConfig::fp_path(int order) const {
    return std::filesystem::path(paths.artifacts_dir) /
           ("fp_o" + std::to_string(order) + ".enfp");
}
std::filesystem::path RunConfig::runs_dir() const {
    return std::filesystem::path(paths.artifacts_dir) / "runs";
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["paths"] = {{"corpus", paths.corpus},
                  {"vocab", paths.vocab},
                  {"artifacts_dir", paths.artifacts_dir}};
    j["backbone"] = {{"vocab_size", backbone.vocab_size},
                     {"d_model", backbone.d_model},
                     {"n_layers", backbone.n_layers},
                     {"n_heads", backbone.n_heads},
                     {"seq_len", backbone.seq_len},
                     {"engram_layers", backbone.engram_layers},
                     {"conv_enabled", backbone.conv_enabled},
                     {"conv_kernel_size", backbone.conv_kernel_size},
                     {"output_proj_enabled", backbone.output_proj_enabled},
                     {"layernorm_eps", backbone.layernorm_eps},
                     {"rms_eps", backbone.rms_eps}};
    j["tier"] = {{"orders", tier.orders},
                 {"heads_k", tier.heads_k},
                 {"head_dim", tier.head_dim},
                 {"n_hot", tier.n_hot},
                 {"cold_slots", tier.cold_slots},
                 {"mode", tier_mode_name(tier.mode)}};
    j["train"] = {{"lr_max", train.lr_max},
                  {"lr_min", train.lr_min},
                  {"warmup_steps", train.warmup_steps},
                  {"total_steps", train.total_steps},
                  {"betas", {train.beta1, train.beta2}},
                  {"weight_decay", train.weight_decay},
                  {"batch_size", train.batch_size},
                  {"grad_accum", train.grad_accum},
                  {"eval_interval", train.eval_interval},
                  {"eval_iters", train.eval_iters},
                  {"seed", train.seed}};
    nlohmann::ordered_json rules = nlohmann::ordered_json::array();
    for (CanonicalRule r : canonical_rules) rules.push_back(canonical_rule_name(r));
    j["canonicalization"] = rules;
    j["hot_mask_rule"] = mask_rule_name(mask_rule);
    if (mask_rule == MaskRule::per_order) j["hot_mask_order"] = mask_rule_order;
    j["seeds"] = {{"data", seeds.data},
                  {"init", seeds.init},
                  {"hash_family", seeds.hash_family},
                  {"fingerprint", seeds.fingerprint},
                  {"mphf_levels", seeds.mphf_levels}};
    if (iso_nominal_budget.has_value()) j["iso_nominal_budget"] = *iso_nominal_budget;
    j["mphf"] = {{"gamma", mphf_gamma}, {"max_levels", mphf_max_levels}};
    j["flip_window"] = flip_window;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        const auto& p = j.at("paths");
        cfg.paths.corpus = p.at("corpus").get<std::string>();
        cfg.paths.vocab = p.value("vocab", std::string{});
        cfg.paths.artifacts_dir = p.value("artifacts_dir", std::string{"artifacts"});

        const auto& b = j.at("backbone");
        cfg.backbone.vocab_size = b.at("vocab_size").get<int>();
        cfg.backbone.d_model = b.at("d_model").get<int>();
        cfg.backbone.n_layers = b.at("n_layers").get<int>();
        cfg.backbone.n_heads = b.at("n_heads").get<int>();
        cfg.backbone.seq_len = b.at("seq_len").get<int>();
        cfg.backbone.engram_layers =
            b.value("engram_layers", std::vector<int>{2, 4, 6});
        cfg.backbone.conv_enabled = b.value("conv_enabled", true);
        cfg.backbone.conv_kernel_size = b.value("conv_kernel_size", 3);
        cfg.backbone.output_proj_enabled = b.value("output_proj_enabled", true);
        cfg.backbone.layernorm_eps = b.value("layernorm_eps", 1e-5);
        cfg.backbone.rms_eps = b.value("rms_eps", 1e-6);

        const auto& t = j.at("tier");
        cfg.tier.orders = t.value("orders", std::vector<int>{2, 3});
        cfg.tier.heads_k = t.value("heads_k", 2);
        cfg.tier.head_dim = t.value("head_dim", 64);
        // scalar broadcast or per-order array, aligned with `orders`
        auto read_per_order = [&](const char* key) -> std::vector<std::uint64_t> {
            if (!t.contains(key)) return {};
            const auto& v = t.at(key);
            if (v.is_number())
                return std::vector<std::uint64_t>(cfg.tier.orders.size(),
                                                  v.get<std::uint64_t>());
            return v.get<std::vector<std::uint64_t>>();
        };
        cfg.tier.n_hot = read_per_order("n_hot");
        cfg.tier.cold_slots = read_per_order("cold_slots");
        cfg.tier.mode = parse_tier_mode(t.value("mode", std::string{"two_tier"}));

        if (j.contains("train")) {
            const auto& tr = j.at("train");
            cfg.train.lr_max = tr.value("lr_max", 6e-4);
            cfg.train.lr_min = tr.value("lr_min", 6e-5);
            cfg.train.warmup_steps = tr.value("warmup_steps", 100);
            cfg.train.total_steps = tr.value("total_steps", 1000);
            if (tr.contains("betas")) {
                cfg.train.beta1 = tr.at("betas").at(0).get<double>();
                cfg.train.beta2 = tr.at("betas").at(1).get<double>();
            }
            cfg.train.weight_decay = tr.value("weight_decay", 0.1);
            cfg.train.batch_size = tr.value("batch_size", 4);
            cfg.train.grad_accum = tr.value("grad_accum", 1);
            cfg.train.eval_interval = tr.value("eval_interval", 250);
            cfg.train.eval_iters = tr.value("eval_iters", 100);
            cfg.train.seed = tr.value("seed", std::uint64_t{0});
        }

        cfg.canonical_rules.clear();
        for (const auto& name :
             j.value("canonicalization", std::vector<std::string>{"identity"}))
            cfg.canonical_rules.push_back(parse_canonical_rule(name));
        cfg.mask_rule = parse_mask_rule(j.value("hot_mask_rule", std::string{"any_order"}));
        cfg.mask_rule_order = j.value("hot_mask_order", 2);

        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            cfg.seeds.data = s.value("data", std::uint64_t{1});
            cfg.seeds.init = s.value("init", std::uint64_t{2});
            cfg.seeds.hash_family = s.value("hash_family", std::uint64_t{3});
            cfg.seeds.fingerprint = s.value("fingerprint", std::uint64_t{4});
            cfg.seeds.mphf_levels = s.value("mphf_levels", std::uint64_t{5});
        }
        if (j.contains("iso_nominal_budget"))
            cfg.iso_nominal_budget = j.at("iso_nominal_budget").get<std::uint64_t>();
        if (j.contains("mphf")) {
            cfg.mphf_gamma = j.at("mphf").value("gamma", 2.0);
            cfg.mphf_max_levels = j.at("mphf").value("max_levels", 16);
        }
        cfg.flip_window = j.value("flip_window", 2);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config parse error: " + std::string(e.what()));
    }
    cfg.backbone.init_seed = cfg.init_seed();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path.string());
    out << canonical_dump() << "\n";
}

void write_artifact_meta(const std::filesystem::path& artifact_path,
                         const RunConfig& cfg) {
    nlohmann::ordered_json meta;
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(cfg.config_hash()));
    meta["config_hash"] = hash_hex;
    meta["config"] = cfg.to_json();
    std::filesystem::path meta_path = artifact_path;
    meta_path += ".meta.json";
    std::ofstream out(meta_path);
    if (!out) throw IoError("cannot write artifact metadata: " + meta_path.string());
    out << meta.dump(2) << "\n";
}

}  // namespace engram
