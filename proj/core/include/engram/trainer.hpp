#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "engram/backbone.hpp"
#include "engram/config.hpp"
#include "engram/memory.hpp"
#include "engram/ngram.hpp"
#include "engram/route_eval.hpp"

namespace engram {

// Token streams prepared for training: the raw stream feeds the backbone, the
// canonical stream feeds n-gram keys and hot masks. Keys never span document
// boundaries. The final 5% of positions form the validation split.
struct TrainData {
    std::vector<std::uint32_t> raw;
    std::vector<std::uint32_t> canonical;
    std::vector<int> orders;
    std::vector<std::vector<std::optional<NgramKey>>> keys_per_order;  // [order][pos]
    std::size_t split_point = 0;

    static TrainData prepare(const Corpus& corpus, const CanonicalMap& map,
                             std::span<const int> orders, double val_fraction = 0.05);

    std::size_t size() const { return raw.size(); }
};

// Per-row gradient buckets for the memory tables; only rows touched by the
// step's retrievals appear here.
struct SparseTableGrads {
    // [order] row -> grad (len K*d)
    std::vector<std::unordered_map<std::uint64_t, std::vector<float>>> hot;
    // [order][head] row -> grad (len d)
    std::vector<std::vector<std::unordered_map<std::uint64_t, std::vector<float>>>> cold;

    void reset(const TierConfig& cfg);
    void scatter(const TierConfig& cfg, const Mat<float>& d_memory,
                 const std::vector<std::vector<RouteInfo>>& routes);
};

struct TrainSummary {
    std::vector<double> step_losses;       // mean train CE per optimizer step
    int evals_written = 0;
    std::filesystem::path final_checkpoint;
    double mean_tokens_per_sec = 0.0;
};

// Batch windows are a pure function of (data seed, stream, index): resuming
// from a checkpoint replays the identical schedule with no generator state.
inline constexpr std::uint64_t kTrainStream = 0x747261696eULL;
inline constexpr std::uint64_t kEvalStream = 0x6576616cULL;

inline std::vector<std::size_t> derive_batch_starts(std::uint64_t data_seed,
                                                    std::uint64_t stream_tag,
                                                    std::uint64_t index, int batch_size,
                                                    std::size_t lo, std::size_t hi) {
    Rng rng(mix_seed(mix_seed(data_seed, stream_tag), index));
    std::vector<std::size_t> starts(batch_size);
    for (auto& s : starts) s = lo + rng.next_below(hi - lo + 1);
    return starts;
}

// Single-threaded deterministic training loop. Batches are derived from
// (data seed, step, micro index) so resume needs no generator state.
class Trainer {
public:
    Trainer(const RunConfig& cfg, TrainData data, MemoryStore<float> store,
            std::vector<HotSet> hot_sets);

    // Resume from an ENCK checkpoint (plus its referenced ENST store).
    void load_checkpoint(const std::filesystem::path& path);

    // Runs steps (resume_step, stop] where stop = min(total_steps,
    // stop_after or total_steps). Evaluates and checkpoints every
    // eval_interval steps; appends metrics/timing rows to the run dir.
    TrainSummary run(const std::filesystem::path& run_dir, int stop_after = 0,
                     bool quiet = false);

    // One stratified evaluation over eval_iters fixed validation batches.
    MetricsRow evaluate(int step);

    const Backbone<float>& model() const { return model_; }
    Backbone<float>& model() { return model_; }
    const MemoryStore<float>& store() const { return store_; }
    int current_step() const { return step_; }

    void save_checkpoint(const std::filesystem::path& run_dir, int step);

private:
    struct AdamMoments {
        std::vector<std::vector<float>> m, v;  // aligned with collect_tensors
        std::vector<Mat<float>> hot_m, hot_v;  // per order
        std::vector<std::vector<Mat<float>>> cold_m, cold_v;  // per order, per head
    };

    std::vector<std::size_t> batch_starts(std::uint64_t stream_tag, std::uint64_t index,
                                          std::size_t lo, std::size_t hi) const;
    void micro_batch_pass(std::span<const std::size_t> starts, float scale,
                          double& loss_sum);
    void apply_adam(double lr, int t);
    void write_diagnostic_dump(const std::filesystem::path& run_dir, int step,
                               double loss) const;

    RunConfig cfg_;
    TrainData data_;
    MemoryStore<float> store_;
    std::vector<HotSet> hot_sets_;
    HotMembership membership_;
    Backbone<float> model_;
    BackboneGrads<float> grads_;
    SparseTableGrads table_grads_;
    AdamMoments moments_;
    int step_ = 0;
    std::string store_ref_;  // filename of the store checkpoint paired with ENCK
};

// Checkpoint IO (ENCK). The store is referenced by filename and saved as a
// sibling ENST file.
void save_train_checkpoint(const std::filesystem::path& path, int step,
                           const RunConfig& cfg, Backbone<float>& model,
                           const MemoryStore<float>& store,
                           const std::string& store_ref,
                           const std::vector<std::vector<float>>& dense_m,
                           const std::vector<std::vector<float>>& dense_v,
                           const std::vector<Mat<float>>& hot_m,
                           const std::vector<Mat<float>>& hot_v,
                           const std::vector<std::vector<Mat<float>>>& cold_m,
                           const std::vector<std::vector<Mat<float>>>& cold_v);

}  // namespace engram
