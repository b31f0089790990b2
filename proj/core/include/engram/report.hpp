#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "engram/config.hpp"
#include "engram/route_eval.hpp"

namespace engram {

// One completed run as loaded from its directory: config echo, deterministic
// metrics rows and the wall-clock timing sidecar.
struct RunLog {
    std::string name;
    RunConfig config;
    std::vector<MetricsRow> rows;
    std::vector<std::pair<int, double>> tokens_per_sec;  // (step, tok/s)
    std::size_t malformed_rows = 0;

    static RunLog load(const std::filesystem::path& run_dir);
};

// Summary tables (final losses, flip timing, final alpha buckets, per-layer
// gate deltas) plus CSV series for plotting. Refuses to mix runs whose tier
// geometry (orders / heads / head dim) differs.
struct ReportFiles {
    std::filesystem::path summary;
    std::vector<std::filesystem::path> csv;
};

ReportFiles emit_report(std::span<const RunLog> runs, int flip_window,
                        const std::filesystem::path& out_dir);

}  // namespace engram
