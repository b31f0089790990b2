#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "engram/config.hpp"
#include "engram/ngram.hpp"

namespace engram {

// Route-stratified evaluation: label every position hot/cold by frequency-set
// membership (post-hoc, independent of which retrieval mode the model ran),
// then decompose loss and gate weight by stratum.

enum class PosLabel : std::uint8_t { hot = 0, cold = 1, unlabelable = 2 };

struct HotMask {
    MaskRule rule = MaskRule::any_order;
    int per_order_order = 0;  // meaningful when rule == per_order
    std::vector<PosLabel> labels;

    std::uint64_t count(PosLabel l) const {
        std::uint64_t n = 0;
        for (PosLabel x : labels) n += (x == l) ? 1 : 0;
        return n;
    }
};

// Membership sets built once per hot set; tags carry the order.
struct HotMembership {
    std::vector<int> orders;
    std::vector<std::unordered_set<std::uint64_t>> tags;  // aligned with orders

    static HotMembership build(std::span<const HotSet> hot_sets);
    bool contains(int order_index, const NgramKey& key) const {
        return tags[order_index].count(key.tag()) > 0;
    }
};

// Label positions from precomputed per-order key columns. A position lacking
// every order's n-gram is unlabelable; under any_order a position is hot iff
// some order's key is a hot member, under all_orders every present key must
// be a member, under per_order only the named order is consulted.
HotMask label_positions(
    std::span<const std::vector<std::optional<NgramKey>>> keys_per_order,
    std::span<const int> orders, const HotMembership& membership, MaskRule rule,
    int per_order_order, std::size_t begin, std::size_t end);

// Spec-level convenience: treat `seq` as one document, extract its n-grams
// and label every position.
HotMask build_hot_mask(std::span<const std::uint32_t> seq,
                       std::span<const HotSet> hot_sets, MaskRule rule,
                       int per_order_order = 0);

struct StratumStats {
    std::optional<double> hot;
    std::optional<double> cold;
    std::optional<double> delta;  // hot - cold, present when both strata exist
    std::uint64_t hot_count = 0;
    std::uint64_t cold_count = 0;
    std::uint64_t unlabelable_count = 0;
};

// Arithmetic means over each stratum; empty stratum reports absent, both
// strata empty is an error.
StratumStats stratified_loss(std::span<const double> losses,
                             std::span<const PosLabel> labels);

struct LayerAlpha {
    int layer = 0;
    std::optional<double> hot;
    std::optional<double> cold;
    std::optional<double> delta;
};

struct AlphaStats {
    StratumStats overall;                // pooled over layers
    std::vector<LayerAlpha> per_layer;
};

AlphaStats stratified_alpha(std::span<const std::vector<double>> alpha_per_layer,
                            std::span<const int> layer_indices,
                            std::span<const PosLabel> labels);

// Five gate-weight buckets [0,0.2), [0.2,0.4), ..., [0.8,1.0]; the last is
// closed at 1.0. Only labeled positions participate.
struct BucketRow {
    double lo = 0.0;
    double hi = 0.0;
    std::optional<double> mean_loss;
    std::optional<double> hot_fraction;
    std::uint64_t count = 0;
};

std::array<BucketRow, 5> alpha_buckets(std::span<const double> alphas,
                                       std::span<const double> losses,
                                       std::span<const PosLabel> labels);

// One metrics-log row, appended per evaluation.
struct MetricsRow {
    int step = 0;
    StratumStats loss;       // hot/cold/delta + split sizes
    double val_loss = 0.0;   // mean over all loss-bearing positions
    AlphaStats alpha;
    std::array<BucketRow, 5> buckets{};
    double coverage = 0.0;   // hot fraction of all eval positions
    std::optional<double> tokens_per_sec;  // lives in the timing sidecar

    nlohmann::ordered_json to_json() const;
    static MetricsRow from_json(const nlohmann::json& j);
};

// First eval step where sign(delta) differs from the initial regime and stays
// flipped for `window` consecutive evals. Extrema are reported on each side.
struct FlipPoint {
    double value = 0.0;
    int step = 0;
};

struct FlipReport {
    std::optional<int> flip_step;
    std::optional<FlipPoint> pre_extremum;   // extremum in the initial regime's direction
    std::optional<FlipPoint> post_extremum;  // extremum in the flipped direction
    int window = 0;
    std::string diagnostic;
};

FlipReport detect_flip(std::span<const std::pair<int, double>> series, int window);

}  // namespace engram
