#include "engram/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace engram {

namespace {

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string fmt_opt(const std::optional<double>& v, int precision = 4) {
    return v.has_value() ? fmt(*v, precision) : std::string("--");
}

std::vector<std::pair<int, double>> delta_series(const RunLog& run) {
    std::vector<std::pair<int, double>> series;
    for (const MetricsRow& row : run.rows)
        if (row.loss.delta.has_value()) series.emplace_back(row.step, *row.loss.delta);
    return series;
}

}  // namespace

RunLog RunLog::load(const std::filesystem::path& run_dir) {
    RunLog log;
    log.name = run_dir.filename().string();
    log.config = RunConfig::load(run_dir / "config.json");

    std::ifstream metrics(run_dir / "metrics.jsonl");
    if (!metrics) throw IoError("cannot open " + (run_dir / "metrics.jsonl").string());
    std::string line;
    std::size_t total_lines = 0;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        ++total_lines;
        try {
            log.rows.push_back(MetricsRow::from_json(nlohmann::json::parse(line)));
        } catch (const Error&) {
            ++log.malformed_rows;
        } catch (const nlohmann::json::exception&) {
            ++log.malformed_rows;
        }
    }
    if (log.malformed_rows > 0) {
        std::cerr << "warning: " << log.malformed_rows << " malformed metrics rows in "
                  << log.name << "\n";
        if (log.malformed_rows * 10 > total_lines)
            throw FormatError("more than 10% of metrics rows are malformed in " +
                              log.name);
    }

    std::ifstream timing(run_dir / "timing.jsonl");
    if (timing) {
        while (std::getline(timing, line)) {
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                log.tokens_per_sec.emplace_back(j.at("step").get<int>(),
                                                j.at("tokens_per_sec").get<double>());
            } catch (const nlohmann::json::exception&) {
                // timing rows are advisory
            }
        }
    }
    return log;
}

ReportFiles emit_report(std::span<const RunLog> runs, int flip_window,
                        const std::filesystem::path& out_dir) {
    if (runs.empty()) throw UsageError("report: need at least one run");
    for (const RunLog& run : runs) {
        if (run.rows.empty())
            throw InputError("report: run " + run.name + " has no metrics rows");
        const TierConfig& a = runs.front().config.tier;
        const TierConfig& b = run.config.tier;
        if (a.orders != b.orders || a.heads_k != b.heads_k || a.head_dim != b.head_dim)
            throw InvariantError(
                "report: runs are not comparable (tier orders/K/d differ): " +
                runs.front().name + " vs " + run.name);
    }
    std::filesystem::create_directories(out_dir);
    ReportFiles files;
    files.summary = out_dir / "report.txt";
    std::ofstream out(files.summary);
    if (!out) throw IoError("cannot write " + files.summary.string());

    // ------ final-result table ------
    out << "== Run summary ==\n";
    out << std::left << std::setw(28) << "config" << std::setw(12) << "val_loss"
        << std::setw(16) << "hot_cold_delta" << std::setw(14) << "tok/s"
        << std::setw(16) << "embed params" << "\n";
    for (const RunLog& run : runs) {
        const MetricsRow& last = run.rows.back();
        double mean_tps = 0.0;
        for (const auto& [step, tps] : run.tokens_per_sec) mean_tps += tps;
        if (!run.tokens_per_sec.empty()) mean_tps /= run.tokens_per_sec.size();
        ParamCount pc = param_count(run.config.tier);
        out << std::left << std::setw(28) << run.name << std::setw(12)
            << fmt(last.val_loss) << std::setw(16) << fmt_opt(last.loss.delta)
            << std::setw(14) << fmt(mean_tps, 1) << std::setw(16) << pc.total_nominal
            << "\n";
    }

    // ------ flip table ------
    out << "\n== Flip timing (window " << flip_window << ") ==\n";
    out << std::left << std::setw(28) << "config" << std::setw(12) << "flip_step"
        << std::setw(26) << "pre-flip extremum" << std::setw(26)
        << "post-flip extremum" << "\n";
    for (const RunLog& run : runs) {
        FlipReport flip = detect_flip(delta_series(run), flip_window);
        std::string pre = flip.pre_extremum.has_value()
                              ? fmt(flip.pre_extremum->value) + " @ " +
                                    std::to_string(flip.pre_extremum->step)
                              : std::string("--");
        std::string post = flip.post_extremum.has_value()
                               ? fmt(flip.post_extremum->value) + " @ " +
                                     std::to_string(flip.post_extremum->step)
                               : std::string("--");
        out << std::left << std::setw(28) << run.name << std::setw(12)
            << (flip.flip_step.has_value() ? std::to_string(*flip.flip_step)
                                           : std::string("none"))
            << std::setw(26) << pre << std::setw(26) << post << "\n";
    }

    // ------ final alpha-bucket tables ------
    for (const RunLog& run : runs) {
        out << "\n== Alpha buckets (final eval, " << run.name << ") ==\n";
        out << std::left << std::setw(14) << "range" << std::setw(12) << "mean_loss"
            << std::setw(12) << "hot_frac" << std::setw(12) << "count" << "\n";
        for (const BucketRow& b : run.rows.back().buckets) {
            std::ostringstream range;
            range << "[" << fmt(b.lo, 1) << "," << fmt(b.hi, 1)
                  << (b.hi >= 1.0 ? "]" : ")");
            out << std::left << std::setw(14) << range.str() << std::setw(12)
                << fmt_opt(b.mean_loss) << std::setw(12) << fmt_opt(b.hot_fraction)
                << std::setw(12) << b.count << "\n";
        }
    }

    // ------ per-layer gate preference ------
    out << "\n== Per-layer delta_alpha (final eval) ==\n";
    out << std::left << std::setw(28) << "config";
    for (const LayerAlpha& la : runs.front().rows.back().alpha.per_layer)
        out << std::setw(14) << ("layer " + std::to_string(la.layer));
    out << "\n";
    for (const RunLog& run : runs) {
        out << std::left << std::setw(28) << run.name;
        for (const LayerAlpha& la : run.rows.back().alpha.per_layer)
            out << std::setw(14) << fmt_opt(la.delta);
        out << "\n";
    }
    out.close();

    // ------ CSV series ------
    auto csv_path = [&](const std::string& name) { return out_dir / name; };
    {
        // union of eval steps across runs
        std::map<int, std::vector<std::optional<double>>> delta_by_step, alpha_hot_by_step,
            alpha_cold_by_step;
        for (std::size_t ri = 0; ri < runs.size(); ++ri) {
            for (const MetricsRow& row : runs[ri].rows) {
                auto ensure = [&](auto& m) -> std::vector<std::optional<double>>& {
                    auto& v = m[row.step];
                    if (v.size() != runs.size()) v.resize(runs.size());
                    return v;
                };
                ensure(delta_by_step)[ri] = row.loss.delta;
                ensure(alpha_hot_by_step)[ri] = row.alpha.overall.hot;
                ensure(alpha_cold_by_step)[ri] = row.alpha.overall.cold;
            }
        }
        auto write_series = [&](const std::string& file, const auto& by_step) {
            std::ofstream csv(csv_path(file));
            csv << "step";
            for (const RunLog& run : runs) csv << "," << run.name;
            csv << "\n";
            for (const auto& [step, values] : by_step) {
                csv << step;
                for (const auto& v : values)
                    csv << "," << (v.has_value() ? fmt(*v, 6) : std::string());
                csv << "\n";
            }
            files.csv.push_back(csv_path(file));
        };
        write_series("delta_vs_step.csv", delta_by_step);
        write_series("alpha_hot_vs_step.csv", alpha_hot_by_step);
        write_series("alpha_cold_vs_step.csv", alpha_cold_by_step);
    }
    {
        std::ofstream csv(csv_path("per_layer_delta_alpha.csv"));
        csv << "run,step,layer,alpha_hot,alpha_cold,delta_alpha\n";
        for (const RunLog& run : runs)
            for (const MetricsRow& row : run.rows)
                for (const LayerAlpha& la : row.alpha.per_layer)
                    csv << run.name << "," << row.step << "," << la.layer << ","
                        << fmt_opt(la.hot, 6) << "," << fmt_opt(la.cold, 6) << ","
                        << fmt_opt(la.delta, 6) << "\n";
        files.csv.push_back(csv_path("per_layer_delta_alpha.csv"));
    }
    {
        std::ofstream csv(csv_path("buckets_final.csv"));
        csv << "run,lo,hi,mean_loss,hot_frac,count\n";
        for (const RunLog& run : runs)
            for (const BucketRow& b : run.rows.back().buckets)
                csv << run.name << "," << fmt(b.lo, 1) << "," << fmt(b.hi, 1) << ","
                    << fmt_opt(b.mean_loss, 6) << "," << fmt_opt(b.hot_fraction, 6)
                    << "," << b.count << "\n";
        files.csv.push_back(csv_path("buckets_final.csv"));
    }
    return files;
}

}  // namespace engram
