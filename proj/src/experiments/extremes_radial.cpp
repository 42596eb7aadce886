#include <cmath>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/extremes.hpp"
#include "bbmlab/parallel.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

void centering(RunContext& ctx) {
    const Config& c = ctx.cfg;
    std::vector<double> times = c.nums("radial.times");
    if (times.size() < 2) throw ConfigError("radial.times", "need at least two times");
    for (std::size_t i = 0; i < times.size(); ++i)
        if (!(times[i] > 1.0) || (i && times[i] <= times[i - 1]))
            throw ConfigError("radial.times", "must be increasing and > 1");
    const std::uint64_t n = c.count("replicates");
    const int boot = int(c.integer("radial.bootstrap"));
    if (boot < 10) throw ConfigError("radial.bootstrap", "must be >= 10");
    const double alpha = c.num("acceptance.trend_alpha");

    auto w = ctx.csv("radial_extremes.csv", {"d", "replicate", "t", "R_t", "r_t", "centered"});
    bool ok = true;
    std::string det;
    json per = json::array();
    for (int d : dims_from(c, "radial.dims")) {
        EngineConfig ec = engine_for_dim(c, d);
        ec.killing = KillingMode::none;
        ec.horizon = times.back();
        ec.checkpoints = times;
        const RngStream rd = ctx.rng.split(std::uint64_t(d));
        const auto recs = parallel_map(std::size_t(n), ctx.workers, [&](std::size_t i) {
            const SimulationResult r = simulate(rd.split(i), ec);
            std::vector<double> out;
            for (const auto& p : r.snapshots) out.push_back(extreme_record(p).R);
            return out;
        });
        std::vector<std::vector<double>> samples(times.size(), std::vector<double>(std::size_t(n)));
        for (std::size_t i = 0; i < recs.size(); ++i)
            for (std::size_t m = 0; m < times.size(); ++m) {
                const double rt = centering_r(times[m], d);
                samples[m][i] = recs[i][m] - rt;
                w.cell(d).cell(std::uint64_t(i)).cell(times[m]).cell(recs[i][m]).cell(rt).cell(samples[m][i]).end_row();
            }
        const TrendTest tt = iqr_trend_test(samples, times, ctx.rng.split(100 + std::uint64_t(d)), boot);
        const bool pass = tt.p_value >= alpha;
        ok = ok && pass;
        json medians = json::array();
        for (const auto& s : samples) medians.push_back(quantile(s, 0.5));
        per.push_back({{"d", d}, {"iqr", tt.values}, {"median", medians}, {"slope", tt.slope}, {"se", tt.se},
                       {"z", tt.z}, {"p_value", tt.p_value}});
        std::string iqrs;
        for (double v : tt.values) iqrs += (iqrs.empty() ? "" : ", ") + fmt(v);
        det += (det.empty() ? "" : "; ") + std::string("d=") + std::to_string(d) + ": IQR (" + iqrs + "), slope " +
               fmt(tt.slope) + " +- " + fmt(tt.se) + ", one-sided p = " + fmt(tt.p_value);
    }
    ctx.summary()["centering"] = per;
    ctx.check("centering_iqr_not_increasing", ok, det + " (alpha " + fmt(alpha) + ")");
}

void confinement(RunContext& ctx) {
    const Config& c = ctx.cfg;
    EngineConfig ec = engine_from(c);
    ec.killing = KillingMode::none;
    const std::vector<double> Cs = c.nums("radial.C_levels");
    if (Cs.size() < 2) throw ConfigError("radial.C_levels", "need at least two levels");
    const double horizon = c.num("radial.confinement_horizon");
    if (!(horizon > 0)) throw ConfigError("radial.confinement_horizon", "must be > 0");
    const std::uint64_t n = c.count("replicates");
    const ConfinementResult cr = radial_confinement_stats(ctx.rng.split(200), ec, Cs, horizon, n, ctx.workers);
    std::vector<double> counts, expo;
    auto w = ctx.csv("confinement.csv", {"C", "count", "n", "frequency", "stderr"});
    json rows = json::array();
    for (std::size_t i = 0; i < Cs.size(); ++i) {
        const double k = std::round(cr.frequency[i].value * double(n));
        counts.push_back(k);
        expo.push_back(double(n));
        w.cell(Cs[i]).cell(k).cell(n).cell(cr.frequency[i].value).cell(cr.frequency[i].std_error).end_row();
        rows.push_back({{"C", Cs[i]}, {"count", k}, {"frequency", cr.frequency[i].value}});
    }
    {
        auto mw = ctx.csv("confinement_max_excess.csv", {"replicate", "max_excess"});
        for (std::size_t i = 0; i < cr.max_excess.size(); ++i) mw.cell(std::uint64_t(i)).cell(cr.max_excess[i]).end_row();
    }
    const LinearFit fit = poisson_loglinear(Cs, counts, expo);
    ctx.summary()["confinement"] = {{"d", ec.d}, {"horizon", horizon}, {"dt", ec.dt}, {"rows", rows},
                                    {"slope", fit.slope}, {"slope_se", fit.se_slope}};
    const auto [lo, hi] = ctx.band("acceptance.confinement_slope_band");
    ctx.check("confinement_slope", fit.slope >= lo && fit.slope <= hi,
              "log exceedance frequency vs C slope = " + fmt(fit.slope) + " +- " + fmt(fit.se_slope) + " (band [" +
                  fmt(lo) + ", " + fmt(hi) + "], d=" + std::to_string(ec.d) + ", t=" + fmt(horizon) + ")");
}

}  // namespace

void run_extremes_radial(RunContext& ctx) {
    const std::string mode = ctx.cfg.str("radial.mode");
    if (mode != "centering" && mode != "confinement" && mode != "both")
        throw ConfigError("radial.mode", "expected centering, confinement or both");
    if (mode != "confinement") centering(ctx);
    if (mode != "centering") confinement(ctx);
}

}  // namespace bbmlab::detail
