#include "engram/route_eval.hpp"

#include <algorithm>
#include <cmath>

namespace engram {

HotMembership HotMembership::build(std::span<const HotSet> hot_sets) {
    HotMembership m;
    for (const HotSet& hs : hot_sets) {
        m.orders.push_back(hs.order);
        std::unordered_set<std::uint64_t> tags;
        tags.reserve(hs.size() * 2);
        for (std::size_t i = 0; i < hs.size(); ++i) tags.insert(hs.key(i).tag());
        m.tags.push_back(std::move(tags));
    }
    return m;
}

HotMask label_positions(
    std::span<const std::vector<std::optional<NgramKey>>> keys_per_order,
    std::span<const int> orders, const HotMembership& membership, MaskRule rule,
    int per_order_order, std::size_t begin, std::size_t end) {
    HotMask mask;
    mask.rule = rule;
    mask.per_order_order = per_order_order;
    mask.labels.reserve(end - begin);

    // map configured order -> membership slot
    std::vector<int> member_slot(orders.size(), -1);
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
        for (std::size_t mi = 0; mi < membership.orders.size(); ++mi)
            if (membership.orders[mi] == orders[oi]) member_slot[oi] = static_cast<int>(mi);
        if (member_slot[oi] < 0)
            throw InputError("hot mask: missing hot set for order " +
                             std::to_string(orders[oi]));
    }

    for (std::size_t pos = begin; pos < end; ++pos) {
        bool any_present = false;
        bool any_hot = false;
        bool all_hot = true;
        PosLabel per_order_label = PosLabel::unlabelable;
        for (std::size_t oi = 0; oi < orders.size(); ++oi) {
            const auto& maybe_key = keys_per_order[oi][pos];
            if (!maybe_key.has_value()) continue;
            any_present = true;
            bool is_hot = membership.contains(member_slot[oi], *maybe_key);
            any_hot = any_hot || is_hot;
            all_hot = all_hot && is_hot;
            if (rule == MaskRule::per_order && orders[oi] == per_order_order)
                per_order_label = is_hot ? PosLabel::hot : PosLabel::cold;
        }
        PosLabel label = PosLabel::unlabelable;
        if (rule == MaskRule::per_order) {
            label = per_order_label;
        } else if (any_present) {
            bool hot = rule == MaskRule::any_order ? any_hot : all_hot;
            label = hot ? PosLabel::hot : PosLabel::cold;
        }
        mask.labels.push_back(label);
    }
    return mask;
}

HotMask build_hot_mask(std::span<const std::uint32_t> seq,
                       std::span<const HotSet> hot_sets, MaskRule rule,
                       int per_order_order) {
    std::vector<int> orders;
    for (const HotSet& hs : hot_sets) orders.push_back(hs.order);
    std::sort(orders.begin(), orders.end());
    PositionKeys pk = extract_suffix_ngrams(seq, orders);
    HotMembership membership = HotMembership::build(hot_sets);
    return label_positions(pk.keys, pk.orders, membership, rule, per_order_order, 0,
                           seq.size());
}

StratumStats stratified_loss(std::span<const double> losses,
                             std::span<const PosLabel> labels) {
    if (losses.size() != labels.size())
        throw InputError("stratified_loss: losses and labels misaligned");
    StratumStats s;
    double hot_sum = 0.0, cold_sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        switch (labels[i]) {
            case PosLabel::hot:
                hot_sum += losses[i];
                ++s.hot_count;
                break;
            case PosLabel::cold:
                cold_sum += losses[i];
                ++s.cold_count;
                break;
            case PosLabel::unlabelable:
                ++s.unlabelable_count;
                break;
        }
    }
    if (s.hot_count == 0 && s.cold_count == 0)
        throw EvaluationError("stratified_loss: both strata empty");
    if (s.hot_count > 0) s.hot = hot_sum / static_cast<double>(s.hot_count);
    if (s.cold_count > 0) s.cold = cold_sum / static_cast<double>(s.cold_count);
    if (s.hot && s.cold) s.delta = *s.hot - *s.cold;
    return s;
}

AlphaStats stratified_alpha(std::span<const std::vector<double>> alpha_per_layer,
                            std::span<const int> layer_indices,
                            std::span<const PosLabel> labels) {
    if (alpha_per_layer.size() != layer_indices.size())
        throw InputError("stratified_alpha: layer streams and indices misaligned");
    AlphaStats out;
    double hot_sum = 0.0, cold_sum = 0.0;
    std::uint64_t hot_n = 0, cold_n = 0, unlabel_n = 0;
    for (std::size_t li = 0; li < alpha_per_layer.size(); ++li) {
        const auto& alphas = alpha_per_layer[li];
        if (alphas.size() != labels.size())
            throw InputError("stratified_alpha: alphas and labels misaligned");
        LayerAlpha la;
        la.layer = layer_indices[li];
        double lh = 0.0, lc = 0.0;
        std::uint64_t nh = 0, nc = 0;
        for (std::size_t i = 0; i < alphas.size(); ++i) {
            if (labels[i] == PosLabel::hot) {
                lh += alphas[i];
                ++nh;
            } else if (labels[i] == PosLabel::cold) {
                lc += alphas[i];
                ++nc;
            } else if (li == 0) {
                ++unlabel_n;
            }
        }
        if (nh > 0) la.hot = lh / static_cast<double>(nh);
        if (nc > 0) la.cold = lc / static_cast<double>(nc);
        if (la.hot && la.cold) la.delta = *la.hot - *la.cold;
        out.per_layer.push_back(la);
        hot_sum += lh;
        cold_sum += lc;
        hot_n += nh;
        cold_n += nc;
    }
    if (hot_n == 0 && cold_n == 0)
        throw EvaluationError("stratified_alpha: both strata empty");
    out.overall.hot_count = hot_n;
    out.overall.cold_count = cold_n;
    out.overall.unlabelable_count = unlabel_n;
    if (hot_n > 0) out.overall.hot = hot_sum / static_cast<double>(hot_n);
    if (cold_n > 0) out.overall.cold = cold_sum / static_cast<double>(cold_n);
    if (out.overall.hot && out.overall.cold)
        out.overall.delta = *out.overall.hot - *out.overall.cold;
    return out;
}

std::array<BucketRow, 5> alpha_buckets(std::span<const double> alphas,
                                       std::span<const double> losses,
                                       std::span<const PosLabel> labels) {
    if (alphas.size() != losses.size() || alphas.size() != labels.size())
        throw InputError("alpha_buckets: misaligned streams");
    std::array<BucketRow, 5> rows{};
    std::array<double, 5> loss_sum{};
    std::array<std::uint64_t, 5> hot_count{};
    for (int b = 0; b < 5; ++b) {
        rows[b].lo = 0.2 * b;
        rows[b].hi = 0.2 * (b + 1);
    }
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (labels[i] == PosLabel::unlabelable) continue;
        int b = std::min(4, static_cast<int>(alphas[i] / 0.2));
        ++rows[b].count;
        loss_sum[b] += losses[i];
        hot_count[b] += labels[i] == PosLabel::hot ? 1 : 0;
    }
    for (int b = 0; b < 5; ++b) {
        if (rows[b].count == 0) continue;
        rows[b].mean_loss = loss_sum[b] / static_cast<double>(rows[b].count);
        rows[b].hot_fraction =
            static_cast<double>(hot_count[b]) / static_cast<double>(rows[b].count);
    }
    return rows;
}

FlipReport detect_flip(std::span<const std::pair<int, double>> series, int window) {
    if (window < 1) throw InputError("detect_flip: window must be >= 1");
    FlipReport report;
    report.window = window;
    if (series.size() < 2) {
        report.diagnostic = "series too short for flip detection";
        return report;
    }
    if (static_cast<int>(series.size()) < window) {
        report.diagnostic = "series shorter than persistence window";
        return report;
    }

    auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
    int initial = 0;
    for (const auto& [step, delta] : series) {
        initial = sign(delta);
        if (initial != 0) break;
    }
    if (initial == 0) {
        report.diagnostic = "series is identically zero";
        return report;
    }

    std::size_t flip_index = series.size();
    for (std::size_t i = 0; i + window <= series.size(); ++i) {
        bool persists = true;
        for (int w = 0; w < window; ++w)
            persists = persists && sign(series[i + w].second) == -initial;
        if (persists) {
            flip_index = i;
            break;
        }
    }

    auto extremum = [&](std::size_t from, std::size_t to, int direction) {
        FlipPoint p{direction > 0 ? -1e300 : 1e300, 0};
        bool found = false;
        for (std::size_t i = from; i < to; ++i) {
            double v = series[i].second;
            if ((direction > 0 && v > p.value) || (direction < 0 && v < p.value)) {
                p.value = v;
                p.step = series[i].first;
                found = true;
            }
        }
        return found ? std::optional<FlipPoint>(p) : std::nullopt;
    };

    if (flip_index == series.size()) {
        report.diagnostic = "no persistent sign change";
        report.pre_extremum = extremum(0, series.size(), initial);
        return report;
    }
    report.flip_step = series[flip_index].first;
    report.pre_extremum = extremum(0, flip_index, initial);
    report.post_extremum = extremum(flip_index, series.size(), -initial);
    return report;
}

// ---------------------------------------------------------------------------
// JSONL row

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    if (v.has_value()) return *v;
    return nullptr;
}

std::optional<double> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

nlohmann::ordered_json MetricsRow::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["split_sizes"] = {{"hot", loss.hot_count},
                        {"cold", loss.cold_count},
                        {"unlabelable", loss.unlabelable_count}};
    j["val_loss"] = val_loss;
    j["val_loss_hot"] = opt_json(loss.hot);
    j["val_loss_cold"] = opt_json(loss.cold);
    j["hot_cold_delta"] = opt_json(loss.delta);
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const LayerAlpha& la : alpha.per_layer) {
        layers.push_back({{"layer", la.layer},
                          {"hot", opt_json(la.hot)},
                          {"cold", opt_json(la.cold)},
                          {"delta", opt_json(la.delta)}});
    }
    j["alpha"] = {{"overall",
                   {{"hot", opt_json(alpha.overall.hot)},
                    {"cold", opt_json(alpha.overall.cold)}}},
                  {"per_layer", layers}};
    nlohmann::ordered_json bucket_rows = nlohmann::ordered_json::array();
    for (const BucketRow& b : buckets) {
        bucket_rows.push_back({{"lo", b.lo},
                               {"hi", b.hi},
                               {"mean_loss", opt_json(b.mean_loss)},
                               {"hot_frac", opt_json(b.hot_fraction)},
                               {"count", b.count}});
    }
    j["buckets"] = bucket_rows;
    j["coverage"] = coverage;
    j["tokens_per_sec"] = opt_json(tokens_per_sec);
    return j;
}

MetricsRow MetricsRow::from_json(const nlohmann::json& j) {
    MetricsRow row;
    try {
        row.step = j.at("step").get<int>();
        row.loss.hot_count = j.at("split_sizes").at("hot").get<std::uint64_t>();
        row.loss.cold_count = j.at("split_sizes").at("cold").get<std::uint64_t>();
        row.loss.unlabelable_count =
            j.at("split_sizes").at("unlabelable").get<std::uint64_t>();
        row.val_loss = j.at("val_loss").get<double>();
        row.loss.hot = opt_from(j.at("val_loss_hot"));
        row.loss.cold = opt_from(j.at("val_loss_cold"));
        row.loss.delta = opt_from(j.at("hot_cold_delta"));
        row.alpha.overall.hot = opt_from(j.at("alpha").at("overall").at("hot"));
        row.alpha.overall.cold = opt_from(j.at("alpha").at("overall").at("cold"));
        if (row.alpha.overall.hot && row.alpha.overall.cold)
            row.alpha.overall.delta = *row.alpha.overall.hot - *row.alpha.overall.cold;
        for (const auto& layer_json : j.at("alpha").at("per_layer")) {
            LayerAlpha la;
            la.layer = layer_json.at("layer").get<int>();
            la.hot = opt_from(layer_json.at("hot"));
            la.cold = opt_from(layer_json.at("cold"));
            la.delta = opt_from(layer_json.at("delta"));
            row.alpha.per_layer.push_back(la);
        }
        const auto& bucket_rows = j.at("buckets");
        if (bucket_rows.size() != 5) throw FormatError("metrics row: expected 5 buckets");
        for (std::size_t b = 0; b < 5; ++b) {
            row.buckets[b].lo = bucket_rows[b].at("lo").get<double>();
            row.buckets[b].hi = bucket_rows[b].at("hi").get<double>();
            row.buckets[b].mean_loss = opt_from(bucket_rows[b].at("mean_loss"));
            row.buckets[b].hot_fraction = opt_from(bucket_rows[b].at("hot_frac"));
            row.buckets[b].count = bucket_rows[b].at("count").get<std::uint64_t>();
        }
        row.coverage = j.at("coverage").get<double>();
        if (j.contains("tokens_per_sec"))
            row.tokens_per_sec = opt_from(j.at("tokens_per_sec"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("metrics row parse error: " + std::string(e.what()));
    }
    return row;
}

}  // namespace engram
