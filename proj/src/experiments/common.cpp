#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>

#include "bbmlab/errors.hpp"
#include "bbmlab/parallel.hpp"
#include "context.hpp"

#ifndef BBMLAB_VERSION
#define BBMLAB_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace bbmlab {

namespace detail {

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec : {15, 16, 17}) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header) : os_(path) {
    if (!os_) throw std::runtime_error("cannot write " + path);
    for (const auto& h : header) cell(h);
    end_row();
}

void CsvWriter::sep() {
    if (!first_) os_ << ',';
    first_ = false;
}

CsvWriter& CsvWriter::cell(double x) {
    sep();
    os_ << fmt(x);
    return *this;
}
CsvWriter& CsvWriter::cell(std::int64_t x) {
    sep();
    os_ << x;
    return *this;
}
CsvWriter& CsvWriter::cell(std::uint64_t x) {
    sep();
    os_ << x;
    return *this;
}
CsvWriter& CsvWriter::cell(const std::string& s) {
    sep();
    os_ << s;
    return *this;
}
void CsvWriter::end_row() {
    os_ << '\n';
    first_ = true;
}

json to_json(const Estimate& e) {
    json j{{"value", e.value}, {"stderr", e.std_error}, {"n", e.n}, {"method", e.method}};
    j["flags"] = e.flags;
    return j;
}

RunContext::RunContext(std::string sub, const Config& c, const RunOptions& opt)
    : cfg(c), subcommand(std::move(sub)), rng(std::uint64_t(c.integer("seed")), 0) {
    const std::int64_t w = opt.workers >= 0 ? opt.workers : c.integer("workers");
    if (w < 0) throw ConfigError("workers", "must be >= 0");
    workers = effective_workers(int(w));
    out_dir_ = opt.out_dir.empty() ? c.str("output") : opt.out_dir;
    if (out_dir_.empty()) throw ConfigError("output", "no output directory");
    fs::create_directories(out_dir_);
    table_cache_ = opt.table_cache.empty() ? c.str("table.cache_dir") : opt.table_cache;
    verbose_ = opt.verbose;
    result.subcommand = subcommand;
    result.criterion_id = int(c.integer("acceptance.id"));
    result.summary = json::object();
}

std::string RunContext::path(const std::string& name) {
    if (std::find(result.data_files.begin(), result.data_files.end(), name) == result.data_files.end())
        result.data_files.push_back(name);
    return (fs::path(out_dir_) / name).string();
}

CsvWriter RunContext::csv(const std::string& name, const std::vector<std::string>& header) {
    return CsvWriter(path(name), header);
}

void RunContext::record_json(const json& j) {
    if (!jsonl_) {
        jsonl_ = std::make_unique<std::ofstream>(path("records.jsonl"));
        if (!*jsonl_) throw std::runtime_error("cannot write records.jsonl");
    }
    *jsonl_ << j.dump() << '\n';
}

void RunContext::record(const std::string& operation, const json& params, const Estimate& e) {
    json j{{"operation", operation}, {"params", params}, {"value", e.value}, {"stderr", e.std_error},
           {"n", e.n}, {"method", e.method}, {"flags", e.flags}};
    record_json(j);
}

void RunContext::check(const std::string& name, bool pass, const std::string& detail, json values) {
    result.checks.push_back({name, pass, detail, std::move(values)});
    log(std::string(pass ? "pass " : "FAIL ") + name + ": " + detail);
}

void RunContext::log(const std::string& msg) const {
    if (verbose_) std::cerr << "[" << subcommand << "] " << msg << std::endl;
}

std::pair<double, double> RunContext::band(const std::string& key) const {
    const auto v = cfg.nums(key);
    if (v.size() != 2 || !(v[0] <= v[1])) throw ConfigError(key, "expected [lo, hi]");
    return {v[0], v[1]};
}

namespace {

std::vector<double> x_grid_from_segments(const Config& c) {
    const json& segs = c.doc().at("table").at("x_segments");
    std::vector<double> xs;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        const json& seg = segs[s];
        if (!seg.is_array() || seg.size() != 3 || !seg[0].is_number() || !seg[1].is_number() || !seg[2].is_number())
            throw ConfigError("table.x_segments", "each segment is [start, stop, step]");
        const double a = seg[0], b = seg[1], h = seg[2];
        if (!(h > 0) || !(b < a)) throw ConfigError("table.x_segments", "need start > stop and step > 0");
        const bool last = s + 1 == segs.size();
        for (long i = 0;; ++i) {
            const double x = a - double(i) * h;
            if (x < b - 1e-9 * h || (!last && x <= b + 1e-9 * h)) break;
            if (xs.empty() || x < xs.back()) xs.push_back(x);
        }
    }
    if (xs.size() < 2) throw ConfigError("table.x_segments", "need at least two levels");
    return xs;
}

}  // namespace

const RTable& RunContext::shared_table() {
    if (table_) return *table_;
    const Barrier b = barrier_from(cfg);
    const std::vector<double> xs = x_grid_from_segments(cfg);
    const std::vector<double> ts = cfg.nums("table.t_grid");
    if (ts.empty() || ts.front() != 0.0) throw ConfigError("table.t_grid", "must start at 0");
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (ts[i] <= ts[i - 1]) throw ConfigError("table.t_grid", "must be increasing");
    REstimateConfig rc = r_estimate_from(cfg);
    rc.method = RMethod::novikov;
    rc.n = cfg.count("table.n");
    rc.workers = workers;

    json key = cfg.doc().at("table");
    key.erase("cache_dir");
    key["barrier"] = b.describe();
    for (const char* k : {"dt", "chord_tol", "max_rel", "novikov_horizon", "tail", "control_variate"})
        key[k] = cfg.doc().at("estimator").at(k);
    const std::string tag = sha256_hex(key.dump()).substr(0, 16);
    const fs::path dir = table_cache_.empty() ? fs::path(out_dir_) : fs::path(table_cache_);
    fs::create_directories(dir);
    const fs::path cached = dir / ("rtable-" + tag + ".csv");
    if (!fs::exists(cached)) {
        log("building shared R table " + std::to_string(xs.size()) + "x" + std::to_string(ts.size()) +
            " n=" + std::to_string(rc.n) + " (" + cached.string() + ")");
        const RTable built = build_rtable(RngStream(std::uint64_t(cfg.integer("table.seed")), 0), b, xs, ts, rc);
        const fs::path tmp = cached.string() + ".tmp";
        built.write_csv(tmp.string());
        fs::rename(tmp, cached);
    }
    table_ = std::make_unique<RTable>(RTable::read_csv(cached.string()));
    const std::string local = path("rtable_shared.csv");
    if (fs::absolute(cached) != fs::absolute(local)) fs::copy_file(cached, local, fs::copy_options::overwrite_existing);
    summary()["shared_table"] = {{"file", "rtable_shared.csv"}, {"key", tag}, {"rows", xs.size()},
                                 {"cols", ts.size()}, {"n", rc.n}};
    return *table_;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

bool RunResult::passed() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"r-estimate",       "conditioned-bm",  "bbm",         "martingale-check",
                                                "direction-measure", "extremes-1d",     "extremes-radial",
                                                "spine-check",       "ppp-sample"};
    return names;
}

RunResult run_experiment(const std::string& sub, const Config& cfg, const RunOptions& opt) {
    using namespace detail;
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    RunContext ctx(sub, cfg, opt);
    if (sub == "r-estimate")
        run_r_estimate(ctx);
    else if (sub == "conditioned-bm")
        run_conditioned(ctx);
    else if (sub == "bbm")
        run_bbm(ctx);
    else if (sub == "martingale-check")
        run_martingale_check(ctx);
    else if (sub == "direction-measure")
        run_direction_measure(ctx);
    else if (sub == "extremes-1d")
        run_extremes_1d(ctx);
    else if (sub == "extremes-radial")
        run_extremes_radial(ctx);
    else if (sub == "spine-check")
        run_spine_check(ctx);
    else if (sub == "ppp-sample")
        run_ppp_sample(ctx);
    else
        throw ConfigError("", "unknown subcommand '" + sub + "'");

    ctx.close_records();
    RunResult& r = ctx.result;
    json checks = json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}, {"values", c.values}});
    json summary{{"subcommand", sub},
                 {"experiment", cfg.str("experiment")},
                 {"config_hash", cfg.hash()},
                 {"seed", cfg.integer("seed")},
                 {"criterion", r.criterion_id},
                 {"pass", r.passed()},
                 {"checks", checks},
                 {"results", r.summary}};
    {
        std::ofstream os(ctx.path("summary.json"));
        os << summary.dump(2) << '\n';
    }
    std::sort(r.data_files.begin(), r.data_files.end());

    const fs::path dir = opt.out_dir.empty() ? fs::path(cfg.str("output")) : fs::path(opt.out_dir);
    json files = json::object();
    for (const auto& f : r.data_files) files[f] = sha256_file((dir / f).string());
    json criteria = json::array();
    for (const auto& c : r.checks) criteria.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json manifest{{"subcommand", sub},
                  {"experiment", cfg.str("experiment")},
                  {"config_hash", cfg.hash()},
                  {"config", cfg.doc()},
                  {"code_version", BBMLAB_VERSION},
                  {"started", started},
                  {"finished", utc_now()},
                  {"wall_seconds", secs},
                  {"workers", ctx.workers},
                  {"files", files},
                  {"criterion", r.criterion_id},
                  {"pass", r.passed()},
                  {"checks", criteria}};
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    return r;
}

}  // namespace bbmlab
