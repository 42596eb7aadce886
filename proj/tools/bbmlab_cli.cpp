// bbmlab command-line driver: one subcommand per study plus `report`.
//
// Exit codes: 0 every check passed, 1 usage or config error, 2 a check failed,
// 3 resource error (population cap, rejection budget).

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "bbmlab/config.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/experiments.hpp"

namespace {

struct StudyArgs {
    std::string config;
    std::int64_t seed = 0;
    bool has_seed = false;
    std::string out;
    int workers = -1;
    std::string table_cache;
    bool verbose = false;
};

int run_study(const std::string& sub, const StudyArgs& a) {
    bbmlab::Config cfg = a.config.empty() ? bbmlab::Config() : bbmlab::Config::load(a.config);
    if (a.has_seed) cfg.set("seed", a.seed);
    // output and workers go through RunOptions so the config hash stays independent of them
    bbmlab::RunOptions opt;
    opt.out_dir = a.out.empty() ? cfg.str("output") : a.out;
    opt.workers = a.workers;
    opt.table_cache = a.table_cache;
    opt.verbose = a.verbose;
    const bbmlab::RunResult r = bbmlab::run_experiment(sub, cfg, opt);
    for (const auto& c : r.checks)
        std::printf("%s %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    std::printf("%s -> %s (%s)\n", sub.c_str(), opt.out_dir.c_str(), r.passed() ? "pass" : "fail");
    return r.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Branching Brownian motion experiment harness"};
    app.require_subcommand(1);
    StudyArgs a;
    std::string chosen;
    for (const auto& name : bbmlab::experiment_names()) {
        CLI::App* s = app.add_subcommand(name, "run the " + name + " study");
        s->add_option("--config", a.config, "JSON config overlaid on the built-in defaults")->check(CLI::ExistingFile);
        s->add_option("--seed", a.seed, "override the config seed")->each([&](const std::string&) { a.has_seed = true; });
        s->add_option("--out", a.out, "output directory (overrides config output)");
        s->add_option("--workers", a.workers, "worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
        s->add_option("--table-cache", a.table_cache, "directory for the cached R table");
        s->add_flag("-v,--verbose", a.verbose, "progress on stderr");
        s->callback([&chosen, name] { chosen = name; });
    }
    std::vector<std::string> dirs;
    std::string report_out = "report";
    CLI::App* rep = app.add_subcommand("report", "aggregate run directories into a report");
    rep->add_option("dirs", dirs, "run directories or parents of run directories")->required();
    rep->add_option("--out", report_out, "report output directory");
    rep->callback([&chosen] { chosen = "report"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        if (chosen == "report") {
            const bbmlab::ReportResult r = bbmlab::build_report(dirs, report_out);
            for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            std::printf("report: %zu rows, %zu plots -> %s\n", r.rows.size(), r.plots.size(), report_out.c_str());
            return 0;
        }
        return run_study(chosen, a);
    } catch (const bbmlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 1;
    } catch (const bbmlab::ResourceError& e) {
        std::fprintf(stderr, "resource error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
