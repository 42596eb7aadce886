#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "bbmlab/config.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/experiments.hpp"

using namespace bbmlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bbmlab-harness-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

RunResult run_in(const fs::path& dir, const std::string& sub, const json& user) {
    RunOptions opt;
    opt.out_dir = dir.string();
    opt.workers = 1;
    return run_experiment(sub, Config::from_json(user), opt);
}

// Shaved martingale with a constant barrier: R(0,0) = A in closed form, so no table is needed.
json shaved_fixture(double dt, bool bridge) {
    return {{"seed", 7},
            {"replicates", 2000},
            {"barrier", {{"family", "constant"}, {"A", 1.0}}},
            {"engine", {{"d", 1}, {"horizon", 6.0}, {"dt", dt}, {"checkpoints", {2.0, 4.0, 6.0}},
                        {"killing", "directional"}, {"directional_bridge", bridge}}},
            {"martingale", {{"dims", {1}}}}};
}

}  // namespace

TEST_CASE("config overlay keeps defaults and rejects unknown keys by dotted path") {
    const Config c = Config::from_json({{"engine", {{"d", 3}}}, {"seed", 9}});
    CHECK(c.integer("engine.d") == 3);
    CHECK(c.integer("seed") == 9);
    CHECK(c.num("engine.dt") == doctest::Approx(0.01));

    try {
        Config::from_json({{"engine", {{"horizn", 1.0}}}});
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "engine.horizn");
    }
    try {
        Config::from_json({{"barrier", {{"A", "one"}}}});
        FAIL("type mismatch accepted");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "barrier.A");
    }
    CHECK_THROWS_AS(Config::from_json({{"version", 2}}), ConfigError);
}

TEST_CASE("typed accessors validate ranges and the hash tracks content") {
    Config c = Config::from_json({{"replicates", 0}});
    CHECK_THROWS_AS(c.count("replicates"), ConfigError);
    CHECK_THROWS_AS(c.str("replicates"), ConfigError);
    CHECK_THROWS_AS(c.num("no.such.key"), ConfigError);
    const std::string h0 = c.hash();
    c.set("seed", 5);
    CHECK(c.hash() != h0);
    CHECK_THROWS_AS(c.set("nope", 1), ConfigError);
    CHECK(Config().hash() == Config().hash());
}

TEST_CASE("barrier and engine blocks validate before any simulation") {
    CHECK_THROWS_AS(barrier_from(Config::from_json({{"barrier", {{"family", "cubic"}}}})), ConfigError);
    CHECK_THROWS_AS(engine_from(Config::from_json({{"engine", {{"killing", "sideways"}}}})), ConfigError);
    CHECK_THROWS_AS(run_in(scratch("badsub"), "no-such-study", json::object()), ConfigError);
}

TEST_CASE("r-estimate with a constant barrier gives R(0,0) = A exactly") {
    const fs::path d = scratch("const");
    const RunResult r = run_in(d, "r-estimate", {{"barrier", {{"family", "constant"}, {"A", 1.0}}}});
    REQUIRE(r.passed());
    CHECK(r.summary["novikov"]["value"].get<double>() == 1.0);
    CHECK(r.summary["novikov"]["stderr"].get<double>() == 0.0);
    CHECK(fs::exists(d / "manifest.json"));
    CHECK(fs::exists(d / "summary.json"));
}

TEST_CASE("bbm at horizon 1 reports mean count e within 3 stderr and reruns byte-identically") {
    const json cfg = {{"population", {{"times", {1.0}}, {"replicates", {10000}}}}};
    const fs::path a = scratch("bbm-a"), b = scratch("bbm-b");
    const RunResult ra = run_in(a, "bbm", cfg);
    CHECK(ra.passed());
    RunOptions opt;
    opt.out_dir = b.string();
    opt.workers = 2;
    const RunResult rb = run_experiment("bbm", Config::from_json(cfg), opt);
    REQUIRE(ra.data_files == rb.data_files);
    for (const auto& f : ra.data_files) CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
}

TEST_CASE("report on an empty directory warns and produces an empty table") {
    const fs::path in = scratch("empty-in"), out = scratch("empty-out");
    const ReportResult r = build_report({in.string()}, out.string());
    CHECK(r.rows.empty());
    CHECK_FALSE(r.warnings.empty());
    CHECK(fs::exists(out / "report.md"));
    CHECK(slurp(out / "report.csv") == "criterion,run,subcommand,status,failed_checks\n");
    const ReportResult missing = build_report({(in / "nope").string()}, out.string());
    CHECK(missing.warnings.size() == 1);
}

TEST_CASE("report marks an all-pass fixture pass and a coarse-dt shaved run fail") {
    const fs::path root = scratch("fixtures"), out = scratch("fixtures-out");
    const RunResult good = run_in(root / "a-good", "martingale-check", shaved_fixture(0.02, true));
    CHECK(good.passed());
    run_in(root / "b-const", "r-estimate", {{"barrier", {{"family", "constant"}, {"A", 1.0}}}});
    // a coarse grid without bridge correction misses in-step crossings, so too few particles are shaved
    const RunResult bad = run_in(root / "c-biased", "martingale-check", shaved_fixture(0.5, false));
    CHECK_FALSE(bad.passed());

    const ReportResult all = build_report({(root / "a-good").string(), (root / "b-const").string()}, out.string());
    REQUIRE(all.rows.size() == 2);
    for (const auto& row : all.rows) CHECK(row["status"] == "pass");
    CHECK_MESSAGE(all.warnings.empty(), (all.warnings.empty() ? "" : all.warnings.front()));

    const ReportResult mixed = build_report({root.string()}, out.string());
    REQUIRE(mixed.rows.size() == 3);
    bool saw_fail = false;
    for (const auto& row : mixed.rows)
        if (row["dir"] == "c-biased") {
            CHECK(row["status"] == "fail");
            CHECK(row["failed_checks"].get<std::string>().find("shaved_integrated_mean") != std::string::npos);
            saw_fail = true;
        }
    CHECK(saw_fail);
    CHECK(std::find(mixed.plots.begin(), mixed.plots.end(), "martingale_a-good.svg") != mixed.plots.end());
    // axis labels contain angle brackets; they must be escaped for the SVG to parse
    const std::string svg = slurp(out / "martingale_a-good.svg");
    CHECK(svg.find("&lt;Z^phi_t, f&gt;") != std::string::npos);
    CHECK(svg.find("<Z^phi") == std::string::npos);

    // tampering with a data file is reported, not fatal
    std::ofstream(root / "b-const" / "records.jsonl", std::ios::app) << "{}\n";
    const ReportResult tampered = build_report({(root / "b-const").string()}, out.string());
    CHECK(tampered.warnings.size() == 1);
}
