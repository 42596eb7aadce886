#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bbmlab/config.hpp"

namespace bbmlab {

/// One named check evaluated by an experiment against its acceptance bands.
struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    nlohmann::json values;
};

struct RunOptions {
    std::string out_dir;      ///< created if absent
    int workers = -1;         ///< -1: take the config value (0 means hardware concurrency)
    std::string table_cache;  ///< overrides table.cache_dir when nonempty
    bool verbose = false;     ///< progress lines on stderr
};

struct RunResult {
    std::string subcommand;
    int criterion_id = 0;  ///< acceptance.id of the config, 0 when the run is a plain study
    std::vector<CheckResult> checks;
    nlohmann::json summary;
    std::vector<std::string> data_files;  ///< relative to out_dir, sorted
    bool passed() const;
};

/// Subcommands accepted by run_experiment (everything except `report`).
const std::vector<std::string>& experiment_names();

/// Runs one study, writes its data files plus summary.json and manifest.json into
/// opt.out_dir and returns the evaluated checks. Throws ConfigError for invalid settings,
/// ResourceError for cap overruns.
RunResult run_experiment(const std::string& subcommand, const Config& cfg, const RunOptions& opt);

struct ReportResult {
    std::vector<std::string> warnings;
    nlohmann::json rows;  ///< one object per run: dir, subcommand, criterion, status
    std::vector<std::string> plots;
};

/// Aggregates manifests found in `dirs` (each a run directory or a parent of run directories)
/// into report.md, report.csv and SVG plots under out_dir. Missing or unreadable manifests
/// produce warnings, never errors.
ReportResult build_report(const std::vector<std::string>& dirs, const std::string& out_dir);

}  // namespace bbmlab
