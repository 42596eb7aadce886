#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbmlab/config.hpp"
#include "bbmlab/experiments.hpp"
#include "bbmlab/rng.hpp"
#include "bbmlab/rtable.hpp"
#include "bbmlab/sphere.hpp"
#include "bbmlab/stats.hpp"

namespace bbmlab::detail {

/// Shortest round-trip text for a double; fixed so data files are byte-reproducible.
std::string fmt(double x);

/// Comma-separated writer; every row is flushed through fmt().
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    CsvWriter& cell(double x);
    CsvWriter& cell(std::int64_t x);
    CsvWriter& cell(std::uint64_t x);
    CsvWriter& cell(int x) { return cell(std::int64_t(x)); }
    CsvWriter& cell(const std::string& s);
    void end_row();

private:
    void sep();
    std::ofstream os_;
    bool first_ = true;
};

class RunContext {
public:
    RunContext(std::string subcommand, const Config& cfg, const RunOptions& opt);

    const Config& cfg;
    const std::string subcommand;
    int workers = 1;
    RngStream rng;

    std::string path(const std::string& name);  ///< registers `name` as a data file
    CsvWriter csv(const std::string& name, const std::vector<std::string>& header);
    void record(const std::string& operation, const nlohmann::json& params, const Estimate& e);
    void record_json(const nlohmann::json& j);
    void check(const std::string& name, bool pass, const std::string& detail, nlohmann::json values = {});
    void log(const std::string& msg) const;
    /// Closes records.jsonl; call before checksumming the data files.
    void close_records() { jsonl_.reset(); }

    /// R table for the configured barrier (table block); cached on disk keyed by its settings.
    const RTable& shared_table();

    double k_sigma() const { return cfg.num("acceptance.k_sigma"); }
    std::pair<double, double> band(const std::string& key) const;

    RunResult result;
    nlohmann::json& summary() { return result.summary; }

private:
    std::string out_dir_;
    std::string table_cache_;
    bool verbose_ = false;
    std::unique_ptr<std::ofstream> jsonl_;
    std::unique_ptr<RTable> table_;
};

nlohmann::json to_json(const Estimate& e);

TestFunction test_function_from(const Config& c, const std::string& key);
/// Dimensions listed under `key`, or engine.d when the list is empty.
std::vector<int> dims_from(const Config& c, const std::string& key);
/// engine block with d replaced (the sphere grid is rebuilt for the new dimension).
EngineConfig engine_for_dim(const Config& c, int d);

void run_r_estimate(RunContext& ctx);
void run_conditioned(RunContext& ctx);
void run_bbm(RunContext& ctx);
void run_martingale_check(RunContext& ctx);
void run_direction_measure(RunContext& ctx);
void run_extremes_1d(RunContext& ctx);
void run_extremes_radial(RunContext& ctx);
void run_spine_check(RunContext& ctx);
void run_ppp_sample(RunContext& ctx);

}  // namespace bbmlab::detail
