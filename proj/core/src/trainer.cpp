#include "engram/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

namespace engram {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

TrainData TrainData::prepare(const Corpus& corpus, const CanonicalMap& map,
                             std::span<const int> orders, double val_fraction) {
    TrainData data;
    data.orders.assign(orders.begin(), orders.end());
    data.raw.reserve(corpus.total_tokens());
    data.canonical.reserve(corpus.total_tokens());
    data.keys_per_order.resize(orders.size());

    for (const auto& doc : corpus.documents) {
        std::vector<std::uint32_t> canon = canonicalize(doc, map);
        // keys are extracted per document, so no n-gram spans a boundary
        for (std::size_t oi = 0; oi < orders.size(); ++oi) {
            auto& column = data.keys_per_order[oi];
            const int order = orders[oi];
            for (std::size_t t = 0; t < canon.size(); ++t) {
                if (t + 1 < static_cast<std::size_t>(order)) {
                    column.emplace_back(std::nullopt);
                } else {
                    column.emplace_back(NgramKey::pack(
                        std::span<const std::uint32_t>(canon).subspan(t + 1 - order,
                                                                      order)));
                }
            }
        }
        data.raw.insert(data.raw.end(), doc.begin(), doc.end());
        data.canonical.insert(data.canonical.end(), canon.begin(), canon.end());
    }
    if (data.raw.empty()) throw InputError("prepare: corpus is empty");
    data.split_point = static_cast<std::size_t>(
        static_cast<double>(data.raw.size()) * (1.0 - val_fraction));
    return data;
}

void SparseTableGrads::reset(const TierConfig& cfg) {
    hot.assign(cfg.orders.size(), {});
    cold.assign(cfg.orders.size(),
                std::vector<std::unordered_map<std::uint64_t, std::vector<float>>>(
                    cfg.heads_k));
}

void SparseTableGrads::scatter(const TierConfig& cfg, const Mat<float>& d_memory,
                               const std::vector<std::vector<RouteInfo>>& routes) {
    const int kd = cfg.hot_row_dim();
    const int d = cfg.head_dim;
    for (std::size_t t = 0; t < routes.size(); ++t) {
        auto dm = d_memory.row(t);
        for (std::size_t oi = 0; oi < cfg.orders.size(); ++oi) {
            const RouteInfo& info = routes[t][oi];
            if (info.route == Route::absent) continue;
            if (info.route == Route::hot) {
                auto& row = hot[oi][info.hot_index];
                if (row.empty()) row.assign(kd, 0.0f);
                for (int c = 0; c < kd; ++c) row[c] += dm[oi * kd + c];
            } else {
                for (int k = 0; k < cfg.heads_k; ++k) {
                    auto& row = cold[oi][k][info.cold_index[k]];
                    if (row.empty()) row.assign(d, 0.0f);
                    for (int c = 0; c < d; ++c) row[c] += dm[oi * kd + k * d + c];
                }
            }
        }
    }
}

Trainer::Trainer(const RunConfig& cfg, TrainData data, MemoryStore<float> store,
                 std::vector<HotSet> hot_sets)
    : cfg_(cfg),
      data_(std::move(data)),
      store_(std::move(store)),
      hot_sets_(std::move(hot_sets)) {
    cfg_.validate();
    membership_ = HotMembership::build(hot_sets_);
    model_.cfg = cfg_.backbone;
    model_.cfg.init_seed = cfg_.init_seed();
    model_.init(cfg_.tier.d_mem());
    grads_.allocate_like(model_);

    auto tensors = collect_tensors(model_);
    moments_.m.resize(tensors.size());
    moments_.v.resize(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        moments_.m[i].assign(tensors[i].values.size(), 0.0f);
        moments_.v[i].assign(tensors[i].values.size(), 0.0f);
    }
    const bool two_tier = cfg_.tier.mode == TierMode::two_tier;
    const std::size_t n_orders = cfg_.tier.orders.size();
    if (two_tier) {
        moments_.hot_m.resize(n_orders);
        moments_.hot_v.resize(n_orders);
        for (std::size_t oi = 0; oi < n_orders; ++oi) {
            moments_.hot_m[oi] =
                Mat<float>(store_.hot_tables[oi].rows, store_.hot_tables[oi].cols);
            moments_.hot_v[oi] =
                Mat<float>(store_.hot_tables[oi].rows, store_.hot_tables[oi].cols);
        }
    }
    moments_.cold_m.resize(n_orders);
    moments_.cold_v.resize(n_orders);
    for (std::size_t oi = 0; oi < n_orders; ++oi) {
        moments_.cold_m[oi].resize(cfg_.tier.heads_k);
        moments_.cold_v[oi].resize(cfg_.tier.heads_k);
        for (int k = 0; k < cfg_.tier.heads_k; ++k) {
            moments_.cold_m[oi][k] = Mat<float>(store_.cold_tables[oi][k].rows,
                                                store_.cold_tables[oi][k].cols);
            moments_.cold_v[oi][k] = Mat<float>(store_.cold_tables[oi][k].rows,
                                                store_.cold_tables[oi][k].cols);
        }
    }
}

std::vector<std::size_t> Trainer::batch_starts(std::uint64_t stream_tag,
                                               std::uint64_t index, std::size_t lo,
                                               std::size_t hi) const {
    return derive_batch_starts(cfg_.data_seed(), stream_tag, index,
                               cfg_.train.batch_size, lo, hi);
}

void Trainer::micro_batch_pass(std::span<const std::size_t> starts, float scale,
                               double& loss_sum) {
    const std::size_t T = static_cast<std::size_t>(cfg_.backbone.seq_len);
    for (std::size_t start : starts) {
        RetrievalBatch<float> batch =
            retrieve_batch(store_, data_.keys_per_order, start, start + T);
        std::span<const std::uint32_t> tokens(data_.raw.data() + start, T);
        std::span<const std::uint32_t> targets(data_.raw.data() + start + 1, T);

        RowCache<float> cache;
        forward_row(model_, tokens, batch.e, cache);
        for (double l : cross_entropy_per_position(cache.logits, targets)) loss_sum += l;

        Mat<float> d_memory(T, static_cast<std::size_t>(cfg_.tier.d_mem()));
        backward_row(model_, cache, tokens, targets, scale, grads_, d_memory);
        table_grads_.scatter(cfg_.tier, d_memory, batch.routes);
    }
}

void Trainer::apply_adam(double lr, int t) {
    const TrainConfig& tc = cfg_.train;
    const double bc1 = 1.0 - std::pow(tc.beta1, t);
    const double bc2 = 1.0 - std::pow(tc.beta2, t);
    const float b1 = static_cast<float>(tc.beta1);
    const float b2 = static_cast<float>(tc.beta2);
    constexpr float kAdamEps = 1e-8f;

    auto params = collect_tensors(model_);
    auto grad_refs = collect_tensors(model_, grads_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values;
        auto g = grad_refs[i].values;
        auto& m = moments_.m[i];
        auto& v = moments_.v[i];
        const float wd =
            params[i].decay ? static_cast<float>(tc.weight_decay) : 0.0f;
        for (std::size_t c = 0; c < p.size(); ++c) {
            m[c] = b1 * m[c] + (1.0f - b1) * g[c];
            v[c] = b2 * v[c] + (1.0f - b2) * g[c] * g[c];
            float mhat = static_cast<float>(m[c] / bc1);
            float vhat = static_cast<float>(v[c] / bc2);
            p[c] -= static_cast<float>(lr) *
                    (mhat / (std::sqrt(vhat) + kAdamEps) + wd * p[c]);
        }
    }

    // Memory tables update lazily: only rows retrieved this step move, so
    // gradient routing stays sparse. No weight decay on these rows.
    auto lazy_row = [&](std::span<float> p, std::span<float> m, std::span<float> v,
                        std::span<const float> g) {
        for (std::size_t c = 0; c < p.size(); ++c) {
            m[c] = b1 * m[c] + (1.0f - b1) * g[c];
            v[c] = b2 * v[c] + (1.0f - b2) * g[c] * g[c];
            float mhat = static_cast<float>(m[c] / bc1);
            float vhat = static_cast<float>(v[c] / bc2);
            p[c] -= static_cast<float>(lr) * (mhat / (std::sqrt(vhat) + kAdamEps));
        }
    };
    for (std::size_t oi = 0; oi < cfg_.tier.orders.size(); ++oi) {
        if (cfg_.tier.mode == TierMode::two_tier) {
            for (auto& [row, grad] : table_grads_.hot[oi])
                lazy_row(store_.hot_tables[oi].row(row), moments_.hot_m[oi].row(row),
                         moments_.hot_v[oi].row(row), grad);
        }
        for (int k = 0; k < cfg_.tier.heads_k; ++k) {
            for (auto& [row, grad] : table_grads_.cold[oi][k])
                lazy_row(store_.cold_tables[oi][k].row(row),
                         moments_.cold_m[oi][k].row(row), moments_.cold_v[oi][k].row(row),
                         grad);
        }
    }
}

MetricsRow Trainer::evaluate(int step) {
    const std::size_t T = static_cast<std::size_t>(cfg_.backbone.seq_len);
    const std::size_t n = data_.size();
    if (n < data_.split_point + T + 1)
        throw UsageError("evaluate: validation split smaller than one window");
    const std::size_t lo = data_.split_point;
    const std::size_t hi = n - T - 1;

    std::vector<double> losses;
    std::vector<PosLabel> labels;
    std::vector<std::vector<double>> alpha_per_layer(model_.engram.size());
    std::vector<int> layer_indices(cfg_.backbone.engram_layers.begin(),
                                   cfg_.backbone.engram_layers.end());

    for (int iter = 0; iter < cfg_.train.eval_iters; ++iter) {
        // fixed eval windows: independent of the step so trajectories compare
        // the same data
        auto starts = batch_starts(kEvalStream, static_cast<std::uint64_t>(iter), lo, hi);
        for (std::size_t start : starts) {
            RetrievalBatch<float> batch =
                retrieve_batch(store_, data_.keys_per_order, start, start + T);
            std::span<const std::uint32_t> tokens(data_.raw.data() + start, T);
            std::span<const std::uint32_t> targets(data_.raw.data() + start + 1, T);
            RowCache<float> cache;
            forward_row(model_, tokens, batch.e, cache);
            for (double l : cross_entropy_per_position(cache.logits, targets))
                losses.push_back(l);
            HotMask mask =
                label_positions(data_.keys_per_order, data_.orders, membership_,
                                cfg_.mask_rule, cfg_.mask_rule_order, start, start + T);
            labels.insert(labels.end(), mask.labels.begin(), mask.labels.end());
            for (std::size_t li = 0; li < model_.engram.size(); ++li)
                for (float a : cache.engram[li].alpha)
                    alpha_per_layer[li].push_back(static_cast<double>(a));
        }
    }

    MetricsRow row;
    row.step = step;
    double total = 0.0;
    for (double l : losses) total += l;
    row.val_loss = total / static_cast<double>(losses.size());
    row.loss = stratified_loss(losses, labels);
    row.coverage = static_cast<double>(row.loss.hot_count) /
                   static_cast<double>(labels.size());

    if (!model_.engram.empty()) {
        row.alpha = stratified_alpha(alpha_per_layer, layer_indices, labels);
        // bucket by the per-position mean gate weight across layers
        std::vector<double> mean_alpha(losses.size(), 0.0);
        for (const auto& stream : alpha_per_layer)
            for (std::size_t i = 0; i < stream.size(); ++i) mean_alpha[i] += stream[i];
        for (double& a : mean_alpha) a /= static_cast<double>(alpha_per_layer.size());
        row.buckets = alpha_buckets(mean_alpha, losses, labels);
    } else {
        for (int b = 0; b < 5; ++b) {
            row.buckets[b].lo = 0.2 * b;
            row.buckets[b].hi = 0.2 * (b + 1);
        }
    }
    return row;
}

void Trainer::write_diagnostic_dump(const std::filesystem::path& run_dir, int step,
                                    double loss) const {
    nlohmann::ordered_json dump;
    dump["step"] = step;
    dump["loss"] = loss;
    dump["lr"] = learning_rate_at(cfg_.train, step);
    dump["config"] = cfg_.to_json();
    std::ofstream out(run_dir / "diagnostic_dump.json");
    out << dump.dump(2) << "\n";
}

TrainSummary Trainer::run(const std::filesystem::path& run_dir, int stop_after,
                          bool quiet) {
    const TrainConfig& tc = cfg_.train;
    const std::size_t T = static_cast<std::size_t>(cfg_.backbone.seq_len);
    if (data_.split_point < T + 1)
        throw UsageError("run: training split smaller than one window");
    if (data_.size() < data_.split_point + T + 1)
        throw UsageError("run: validation split smaller than one window");

    std::filesystem::create_directories(run_dir);
    const bool resumed = step_ > 0;
    if (!resumed) cfg_.save(run_dir / "config.json");
    auto mode = resumed ? std::ios::app : std::ios::trunc;
    std::ofstream metrics(run_dir / "metrics.jsonl", mode);
    std::ofstream timing(run_dir / "timing.jsonl", mode);
    if (!metrics || !timing) throw IoError("cannot open log files in " + run_dir.string());

    int stop = tc.total_steps;
    if (stop_after > 0) stop = std::min(stop, stop_after);
    if (tc.total_steps < tc.eval_interval && !quiet)
        std::cerr << "warning: total_steps < eval_interval, no eval rows will be "
                     "written\n";

    TrainSummary summary;
    const float scale =
        1.0f / static_cast<float>(static_cast<std::size_t>(tc.batch_size) * T *
                                  static_cast<std::size_t>(tc.grad_accum));
    const std::size_t train_hi = data_.split_point - T - 1;

    double train_seconds = 0.0;
    std::uint64_t tokens_since_eval = 0;
    double seconds_since_eval = 0.0;

    for (int step = step_ + 1; step <= stop; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        grads_.zero();
        table_grads_.reset(cfg_.tier);
        double loss_sum = 0.0;
        for (int micro = 0; micro < tc.grad_accum; ++micro) {
            auto starts = batch_starts(
                kTrainStream,
                static_cast<std::uint64_t>(step) * 1024 + static_cast<std::uint64_t>(micro),
                0, train_hi);
            micro_batch_pass(starts, scale, loss_sum);
        }
        double step_loss =
            loss_sum / (static_cast<double>(tc.batch_size) * static_cast<double>(T) *
                        static_cast<double>(tc.grad_accum));
        if (!std::isfinite(step_loss)) {
            write_diagnostic_dump(run_dir, step, step_loss);
            throw InvariantError("non-finite training loss at step " +
                                 std::to_string(step) + "; diagnostic dump written to " +
                                 (run_dir / "diagnostic_dump.json").string());
        }
        summary.step_losses.push_back(step_loss);

        double lr = learning_rate_at(tc, step);
        apply_adam(lr, step);
        step_ = step;

        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        train_seconds += secs;
        seconds_since_eval += secs;
        tokens_since_eval += static_cast<std::uint64_t>(tc.batch_size) * T *
                             static_cast<std::uint64_t>(tc.grad_accum);

        if (step % tc.eval_interval == 0) {
            MetricsRow row = evaluate(step);
            // throughput goes to the timing sidecar; the metrics log stays a
            // pure function of (config, seeds) so same-seed runs diff clean
            metrics << row.to_json().dump() << "\n";
            metrics.flush();
            double tps = tokens_since_eval / std::max(seconds_since_eval, 1e-9);
            nlohmann::ordered_json trow{{"step", step}, {"tokens_per_sec", tps}};
            timing << trow.dump() << "\n";
            timing.flush();
            tokens_since_eval = 0;
            seconds_since_eval = 0.0;
            ++summary.evals_written;

            save_checkpoint(run_dir, step);
            if (!quiet)
                std::cout << "step " << step << "  train_loss " << step_loss
                          << "  val_loss " << row.val_loss << "  lr " << lr << "\n";
        }
    }

    summary.mean_tokens_per_sec =
        summary.step_losses.empty()
            ? 0.0
            : static_cast<double>(summary.step_losses.size()) *
                  static_cast<double>(tc.batch_size) * static_cast<double>(T) *
                  static_cast<double>(tc.grad_accum) / std::max(train_seconds, 1e-9);
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06d.enck", step_);
    summary.final_checkpoint = run_dir / name;
    return summary;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "ENCK", version, step, config echo, store reference,
// tensors as little-endian f32, optimizer moments as f32.

void save_train_checkpoint(const std::filesystem::path& path, int step,
                           const RunConfig& cfg, Backbone<float>& model,
                           const MemoryStore<float>& store,
                           const std::string& store_ref,
                           const std::vector<std::vector<float>>& dense_m,
                           const std::vector<std::vector<float>>& dense_v,
                           const std::vector<Mat<float>>& hot_m,
                           const std::vector<Mat<float>>& hot_v,
                           const std::vector<std::vector<Mat<float>>>& cold_m,
                           const std::vector<std::vector<Mat<float>>>& cold_v) {
    BinaryWriter w;
    w.magic("ENCK");
    w.u16(kCheckpointVersion);
    w.u64(static_cast<std::uint64_t>(step));
    w.str(cfg.canonical_dump());
    w.str(store_ref);

    auto tensors = collect_tensors(model);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& ref : tensors) {
        w.str(ref.name);
        w.u64(ref.values.size());
        for (float v : ref.values) w.f32(v);
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        for (float v : dense_m[i]) w.f32(v);
        for (float v : dense_v[i]) w.f32(v);
    }
    auto write_mat = [&w](const Mat<float>& m) {
        w.u64(m.rows);
        w.u64(m.cols);
        for (float v : m.data) w.f32(v);
    };
    const bool two_tier = store.cfg.mode == TierMode::two_tier;
    for (std::size_t oi = 0; oi < store.cfg.orders.size(); ++oi) {
        if (two_tier) {
            write_mat(hot_m[oi]);
            write_mat(hot_v[oi]);
        }
        for (int k = 0; k < store.cfg.heads_k; ++k) {
            write_mat(cold_m[oi][k]);
            write_mat(cold_v[oi][k]);
        }
    }
    write_file(path, w.buffer());
}

void Trainer::save_checkpoint(const std::filesystem::path& run_dir, int step) {
    char store_name[32], ckpt_name[32];
    std::snprintf(store_name, sizeof(store_name), "store_%06d.enst", step);
    std::snprintf(ckpt_name, sizeof(ckpt_name), "ckpt_%06d.enck", step);
    save_store(store_, run_dir / store_name);
    store_ref_ = store_name;
    save_train_checkpoint(run_dir / ckpt_name, step, cfg_, model_, store_, store_ref_,
                          moments_.m, moments_.v, moments_.hot_m, moments_.hot_v,
                          moments_.cold_m, moments_.cold_v);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    auto raw = read_file(path);
    BinaryReader r(raw);
    r.expect_magic("ENCK");
    std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported ENCK version " + std::to_string(version));
    step_ = static_cast<int>(r.u64());
    std::string config_echo = r.str();
    std::string store_ref = r.str();

    // sanity: the checkpoint must describe the same experiment
    if (fnv1a64(config_echo) != cfg_.config_hash())
        throw InvariantError("checkpoint config echo does not match the loaded config");

    auto tensors = collect_tensors(model_);
    std::uint32_t n_tensors = r.u32();
    if (n_tensors != tensors.size())
        throw FormatError("checkpoint tensor count mismatch");
    for (auto& ref : tensors) {
        std::string name = r.str();
        if (name != ref.name)
            throw FormatError("checkpoint tensor order mismatch at " + name);
        std::uint64_t len = r.u64();
        if (len != ref.values.size())
            throw FormatError("checkpoint tensor size mismatch at " + name);
        for (auto& v : ref.values) v = r.f32();
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        for (auto& v : moments_.m[i]) v = r.f32();
        for (auto& v : moments_.v[i]) v = r.f32();
    }
    auto read_mat = [&r](Mat<float>& m) {
        std::uint64_t rows = r.u64();
        std::uint64_t cols = r.u64();
        if (rows != m.rows || cols != m.cols)
            throw FormatError("checkpoint moment table shape mismatch");
        for (auto& v : m.data) v = r.f32();
    };
    const bool two_tier = store_.cfg.mode == TierMode::two_tier;
    for (std::size_t oi = 0; oi < store_.cfg.orders.size(); ++oi) {
        if (two_tier) {
            read_mat(moments_.hot_m[oi]);
            read_mat(moments_.hot_v[oi]);
        }
        for (int k = 0; k < store_.cfg.heads_k; ++k) {
            read_mat(moments_.cold_m[oi][k]);
            read_mat(moments_.cold_v[oi][k]);
        }
    }

    // table values come from the sibling store checkpoint
    std::filesystem::path store_path = path.parent_path() / store_ref;
    store_ = load_store(store_path);
    store_ref_ = store_ref;
}

}  // namespace engram
