#include <cmath>
#include <fstream>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/parallel.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

// Geometric(p = e^{-t}) on {1, 2, ...}: roughly equal-probability bins, each with expected >= 5.
ChiSquareResult geometric_chi2(const std::vector<double>& counts, double t, int bins) {
    const double q = 1.0 - std::exp(-t);
    const double n = double(counts.size());
    std::vector<double> upper;  // inclusive upper edges
    for (int j = 1; j < bins; ++j) {
        const double k = std::ceil(std::log(1.0 - double(j) / bins) / std::log(q));
        if (k >= 1 && (upper.empty() || k > upper.back())) upper.push_back(k);
    }
    std::vector<double> obs(upper.size() + 1, 0.0), expd(upper.size() + 1, 0.0);
    double prev = 0.0;
    for (std::size_t j = 0; j <= upper.size(); ++j) {
        const double cdf = j < upper.size() ? 1.0 - std::pow(q, upper[j]) : 1.0;
        expd[j] = n * (cdf - prev);
        prev = cdf;
    }
    for (double c : counts) {
        const std::size_t j = std::size_t(std::lower_bound(upper.begin(), upper.end(), c) - upper.begin());
        obs[j] += 1.0;
    }
    // merge sparse bins into their left neighbour
    std::vector<double> o2, e2;
    for (std::size_t j = 0; j < obs.size(); ++j) {
        if (!e2.empty() && (expd[j] < 5.0 || e2.back() < 5.0)) {
            o2.back() += obs[j];
            e2.back() += expd[j];
        } else {
            o2.push_back(obs[j]);
            e2.push_back(expd[j]);
        }
    }
    return chi_square_gof(o2, e2);
}

}  // namespace

void run_bbm(RunContext& ctx) {
    const Config& c = ctx.cfg;
    EngineConfig base = engine_from(c);
    const std::vector<double> times = c.nums("population.times");
    const std::vector<std::uint64_t> reps = c.counts("population.replicates");
    if (times.empty()) throw ConfigError("population.times", "must not be empty");
    if (reps.size() != times.size()) throw ConfigError("population.replicates", "must match population.times in length");
    const std::uint64_t snaps = std::uint64_t(std::max<std::int64_t>(0, c.integer("engine.snapshot_replicates")));
    const int bins = int(c.integer("population.geometric_bins"));
    const double k = ctx.k_sigma(), alpha = c.num("acceptance.test_alpha");
    const bool plain = base.killing == KillingMode::none;

    std::vector<double> waits;
    bool means_ok = true;
    std::string mean_detail;
    json rows = json::array();
    auto cw = ctx.csv("population_counts.csv", {"time", "replicate", "count", "killed"});
    std::ofstream snap_os;
    std::ofstream over_os;
    for (std::size_t m = 0; m < times.size(); ++m) {
        EngineConfig ec = base;
        ec.horizon = times[m];
        ec.checkpoints = {times[m]};
        ec.record_waits = true;
        const RngStream rm = ctx.rng.split(1 + m);
        const auto res = parallel_map(std::size_t(reps[m]), ctx.workers, [&](std::size_t i) { return simulate(rm.split(i), ec); });
        RunningStats st;
        std::vector<double> counts;
        counts.reserve(res.size());
        for (std::size_t i = 0; i < res.size(); ++i) {
            const Population& p = res[i].snapshots.back();
            counts.push_back(double(p.size()));
            st.add(double(p.size()));
            waits.insert(waits.end(), res[i].waits.begin(), res[i].waits.end());
            cw.cell(times[m]).cell(std::uint64_t(i)).cell(std::uint64_t(p.size())).cell(std::uint64_t(p.killed_count)).end_row();
        }
        if (snaps > 0) {
            if (!snap_os.is_open()) snap_os.open(ctx.path("snapshots.csv"));
            std::vector<std::pair<std::uint64_t, Population>> sr;
            for (std::uint64_t i = 0; i < std::min<std::uint64_t>(snaps, res.size()); ++i)
                sr.emplace_back(i, res[i].snapshots.back());
            write_snapshot_csv(snap_os, sr, m == 0);
            if (base.killing == KillingMode::directional) {
                if (!over_os.is_open()) {
                    over_os.open(ctx.path("overshoots.csv"));
                    over_os << "replicate,time,particle_id,direction_index,overshoot_max\n";
                }
                for (const auto& [rep, p] : sr)
                    for (Eigen::Index j = 0; j < p.overshoot.cols(); ++j)
                        for (Eigen::Index kk = 0; kk < p.overshoot.rows(); ++kk)
                            over_os << rep << ',' << fmt(p.time) << ',' << p.ids[std::size_t(j)] << ',' << kk << ','
                                    << fmt(double(p.overshoot(kk, j))) << '\n';
            }
        }
        const Estimate e = st.estimate("mean_count");
        ctx.record("population_mean", {{"t", times[m]}, {"d", ec.d}}, e);
        json row{{"t", times[m]}, {"replicates", reps[m]}, {"mean", to_json(e)}};
        if (plain) {
            const double target = std::exp(times[m]);
            const double z = (e.value - target) / e.std_error;
            if (!(std::abs(z) <= k)) means_ok = false;
            row["expected"] = target;
            row["z"] = z;
            mean_detail += (mean_detail.empty() ? "" : "; ") + std::string("t=") + fmt(times[m]) + ": " + fmt(e.value) +
                           " +- " + fmt(e.std_error) + " vs e^t " + fmt(target) + " (z " + fmt(z) + ")";
            if (bins >= 2) {
                const ChiSquareResult g = geometric_chi2(counts, times[m], bins);
                row["geometric_chi2"] = {{"statistic", g.statistic}, {"dof", g.dof}, {"p_value", g.p_value}};
            }
        }
        rows.push_back(row);
        ctx.log("t=" + fmt(times[m]) + " mean count " + fmt(e.value));
    }
    const KSResult ks = ks_test(waits, [](double x) { return x <= 0 ? 0.0 : -std::expm1(-x); });
    ctx.summary()["population"] = rows;
    ctx.summary()["branch_waits"] = {{"n", ks.n}, {"ks_statistic", ks.statistic}, {"p_value", ks.p_value}};
    if (plain) ctx.check("population_mean", means_ok, mean_detail);
    ctx.check("branch_wait_ks", ks.p_value >= alpha,
              "pooled KS vs exponential(1) over " + std::to_string(ks.n) + " waits: D = " + fmt(ks.statistic) +
                  ", p = " + fmt(ks.p_value) + " (alpha " + fmt(alpha) + ")");
}

}  // namespace bbmlab::detail
