// Acceptance suite: runs every criterion config end to end and prints one line per criterion.
//
// usage: acceptance <configs dir> <work dir> [--only 1,6,12] [--table-cache DIR]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bbmlab/config.hpp"
#include "bbmlab/experiments.hpp"

namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    std::string config;      // file name under the configs dir
    std::string subcommand;
};

const std::vector<Criterion> kCriteria{
    {1, "c01_constant_exact.json", "r-estimate"},
    {2, "c02_novikov_ladder.json", "r-estimate"},
    {3, "c03_sandwich.json", "r-estimate"},
    {4, "c04_killed_martingale.json", "r-estimate"},
    {5, "c05_conditioned.json", "conditioned-bm"},
    {6, "c06_population.json", "bbm"},
    {7, "c07_shaved_martingale.json", "martingale-check"},
    {8, "c08_spine.json", "spine-check"},
    {9, "c09_confinement.json", "extremes-radial"},
    {10, "c10_centering.json", "extremes-radial"},
    {11, "c11_joint_extremes.json", "extremes-1d"},
    {12, "c12_gumbel_argmax.json", "extremes-1d"},
    {13, "c13_direction.json", "direction-measure"},
};

// Configs rerun for the reproducibility criterion; cheap ones covering the scalar path,
// the particle engine, the radial statistics and the Gumbel sampler.
const std::vector<int> kReproIds{1, 6, 9, 12};

struct Outcome {
    bool pass = false;
    std::string detail;
    std::map<std::string, std::string> checksums;  // data file -> sha256
};

Outcome run_one(const Criterion& c, const fs::path& configs, const fs::path& out, int workers, const std::string& cache) {
    Outcome o;
    try {
        const bbmlab::Config cfg = bbmlab::Config::load((configs / c.config).string());
        if (cfg.integer("acceptance.id") != c.id) {
            o.detail = c.config + " carries acceptance.id " + std::to_string(cfg.integer("acceptance.id"));
            return o;
        }
        bbmlab::RunOptions opt;
        opt.out_dir = out.string();
        opt.workers = workers;
        opt.table_cache = cache;
        fs::remove_all(out);
        const bbmlab::RunResult r = bbmlab::run_experiment(c.subcommand, cfg, opt);
        o.pass = r.passed() && !r.checks.empty();
        for (const auto& ch : r.checks) {
            if (!o.detail.empty()) o.detail += " | ";
            o.detail += std::string(ch.pass ? "" : "FAILED ") + ch.name + ": " + ch.detail;
        }
        for (const auto& f : r.data_files) o.checksums[f] = bbmlab::sha256_file((out / f).string());
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("error: ") + e.what();
    }
    return o;
}

std::set<int> parse_only(const std::string& s) {
    std::set<int> ids;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) ids.insert(std::stoi(item));
    return ids;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <configs dir> <work dir> [--only ids] [--table-cache dir]\n", argv[0]);
        return 1;
    }
    const fs::path configs = argv[1], work = argv[2];
    std::set<int> only;
    std::string cache = (work / "table-cache").string();
    for (int i = 3; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--only")
            only = parse_only(argv[i + 1]);
        else if (flag == "--table-cache")
            cache = argv[i + 1];
        else {
            std::fprintf(stderr, "unknown option %s\n", flag.c_str());
            return 1;
        }
    }
    fs::create_directories(work);
    auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

    int failures = 0;
    std::map<int, Outcome> results;
    for (const auto& c : kCriteria) {
        if (!wanted(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = run_one(c, configs, work / ("criterion-" + std::to_string(c.id)), -1, cache);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d: %s [%s, %.0f s] %s\n", c.id, o.pass ? "PASS" : "FAIL", c.subcommand.c_str(), secs,
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
        results[c.id] = std::move(o);
    }

    if (wanted(14)) {
        bool ok = true;
        std::string det;
        for (int id : kReproIds) {
            const Criterion& c = kCriteria[std::size_t(id - 1)];
            const Outcome a = run_one(c, configs, work / ("repro-" + std::to_string(id) + "-w1"), 1, cache);
            const Outcome b = run_one(c, configs, work / ("repro-" + std::to_string(id) + "-w2"), 2, cache);
            bool same = !a.checksums.empty() && a.checksums == b.checksums;
            // the main run used the default worker count; compare it too when it ran
            const auto it = results.find(id);
            if (it != results.end()) same = same && it->second.checksums == a.checksums;
            ok = ok && same;
            det += (det.empty() ? "" : "; ") + c.config + ": " + std::to_string(a.checksums.size()) + " files " +
                   (same ? "identical" : "DIFFER");
        }
        std::printf("criterion 14: %s [reproducibility, workers 1 vs 2] %s\n", ok ? "PASS" : "FAIL", det.c_str());
        if (!ok) ++failures;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
