#include <cmath>
#include <fstream>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

TestFunction test_function_from(const Config& c, const std::string& key) {
    const std::string s = c.str(key);
    if (s == "constant") return TestFunction::constant;
    if (s == "hemisphere") return TestFunction::hemisphere;
    if (s == "first_harmonic") return TestFunction::first_harmonic;
    throw ConfigError(key, "expected constant, hemisphere or first_harmonic");
}

std::vector<int> dims_from(const Config& c, const std::string& key) {
    std::vector<int> dims;
    for (double d : c.nums(key)) {
        if (d < 1 || d > 64 || d != std::floor(d)) throw ConfigError(key, "dimensions must be integers in [1, 64]");
        dims.push_back(int(d));
    }
    if (dims.empty()) dims.push_back(int(c.integer("engine.d")));
    return dims;
}

EngineConfig engine_for_dim(const Config& c, int d) {
    EngineConfig e = engine_from(c);
    if (e.d != d) {
        e.d = d;
        e.grid = std::make_shared<SphereGrid>(
            make_sphere_grid(d, int(c.integer("grid.count")), std::uint64_t(c.integer("grid.seed"))));
    }
    return e;
}

void run_martingale_check(RunContext& ctx) {
    const Config& c = ctx.cfg;
    const Barrier b = barrier_from(c);
    const bool closed_form = b.family() == BarrierFamily::constant;
    const RTable* tab = closed_form ? nullptr : &ctx.shared_table();
    Estimate R00;
    if (closed_form) {
        R00.value = b.eval(0.0);
        R00.method = "closed form";
    } else {
        const auto& xs = tab->x_grid();
        const auto i = std::find(xs.begin(), xs.end(), 0.0);
        if (i == xs.end()) throw ConfigError("table.x_segments", "the table must contain the level x = 0");
        R00.value = tab->values()(i - xs.begin(), 0);
        R00.std_error = tab->std_errors()(i - xs.begin(), 0);
        R00.n = tab->meta().n;
        R00.method = "table";
    }
    const std::uint64_t n = c.count("replicates");
    const double k = ctx.k_sigma();
    const TestFunction tf = test_function_from(c, "martingale.test_function");
    const bool series = c.flag("martingale.write_timeseries");

    auto mw = ctx.csv("martingale_means.csv", {"d", "time", "direction_index", "W_mean", "W_stderr", "Z_mean", "Z_stderr",
                                               "Zphi_mean", "Zphi_stderr", "Zphi_linear_mean", "Zphi_linear_stderr"});
    auto iw = ctx.csv("martingale_integrated.csv", {"d", "time", "mean", "stderr", "target", "target_stderr", "z"});
    std::ofstream ts_os;
    if (series) {
        ts_os.open(ctx.path("martingale_timeseries.csv"));
        ts_os << "d,replicate,time,direction_index,W,Z,Z_phi,Z_phi_linear\n";
    }

    bool const_ok = true, integ_ok = true;
    double worst_pair = 0.0, worst_integ = 0.0;
    std::string integ_detail;
    json per_dim = json::array();
    for (int d : dims_from(c, "martingale.dims")) {
        EngineConfig ec = engine_for_dim(c, d);
        ec.killing = KillingMode::directional;
        ec.barrier = b;
        if (ec.checkpoints.empty()) ec.checkpoints = {ec.horizon};
        const SphereGrid& g = *ec.grid;
        const Eigen::VectorXd f = test_function(g, tf);
        const double f_mass = sphere_integrate(Eigen::VectorXd::Ones(g.size()), g, f);
        const std::size_t m = ec.checkpoints.size();
        const RngStream rd = ctx.rng.split(std::uint64_t(d));
        const auto snaps = parallel_map(std::size_t(n), ctx.workers, [&](std::size_t i) {
            const SimulationResult r = simulate(rd.split(i), ec);
            std::vector<MartingaleSnapshot> out;
            for (const auto& p : r.snapshots) out.push_back(martingale_snapshot(p, g, b, tab));
            return out;
        });

        const Eigen::Index K = g.size();
        std::vector<std::vector<RunningStats>> W(m, std::vector<RunningStats>(std::size_t(K))), Z = W, P = W, L = W;
        std::vector<std::vector<RunningStats>> diff(m > 1 ? m - 1 : 0, std::vector<RunningStats>(std::size_t(K)));
        std::vector<RunningStats> integ(m), positive(m);
        std::uint64_t fallbacks = 0;
        std::vector<Eigen::VectorXd> osc_sum;
        RunningStats osc;
        for (std::size_t i = 0; i < snaps.size(); ++i) {
            std::vector<Eigen::VectorXd> zs;
            for (std::size_t j = 0; j < m; ++j) {
                const MartingaleSnapshot& s = snaps[i][j];
                fallbacks += s.fallbacks;
                for (Eigen::Index q = 0; q < K; ++q) {
                    W[j][std::size_t(q)].add(s.W[q]);
                    Z[j][std::size_t(q)].add(s.Z[q]);
                    P[j][std::size_t(q)].add(s.Z_phi[q]);
                    L[j][std::size_t(q)].add(s.Z_phi_linear[q]);
                    if (j > 0) diff[j - 1][std::size_t(q)].add(s.Z_phi[q] - snaps[i][j - 1].Z_phi[q]);
                    if (series)
                        ts_os << d << ',' << i << ',' << fmt(s.time) << ',' << q << ',' << fmt(s.W[q]) << ',' << fmt(s.Z[q])
                              << ',' << fmt(s.Z_phi[q]) << ',' << fmt(s.Z_phi_linear[q]) << '\n';
                }
                integ[j].add(sphere_integrate(s.Z_phi, g, f));
                positive[j].add(sphere_integrate(s.Z, g) > 0.0 ? 1.0 : 0.0);
                zs.push_back(s.Z);
            }
            if (m >= 2) osc.add(trajectory_oscillation(zs, int(std::min<std::size_t>(m, 3))).mean());
        }

        json rows = json::array();
        for (std::size_t j = 0; j < m; ++j) {
            for (Eigen::Index q = 0; q < K; ++q) {
                const std::size_t u = std::size_t(q);
                mw.cell(d).cell(ec.checkpoints[j]).cell(std::int64_t(q)).cell(W[j][u].mean()).cell(W[j][u].std_error())
                    .cell(Z[j][u].mean()).cell(Z[j][u].std_error()).cell(P[j][u].mean()).cell(P[j][u].std_error())
                    .cell(L[j][u].mean()).cell(L[j][u].std_error()).end_row();
            }
            const Estimate ie = integ[j].estimate("shaved_integrated");
            const double target = R00.value * f_mass, tse = R00.std_error * std::abs(f_mass);
            const double se = std::sqrt(ie.std_error * ie.std_error + tse * tse);
            const double z = se > 0 ? (ie.value - target) / se : (ie.value == target ? 0.0 : INFINITY);
            if (!(std::abs(z) <= k)) integ_ok = false;
            worst_integ = std::max(worst_integ, std::abs(z));
            iw.cell(d).cell(ec.checkpoints[j]).cell(ie.value).cell(ie.std_error).cell(target).cell(tse).cell(z).end_row();
            ctx.record("shaved_integrated", {{"d", d}, {"t", ec.checkpoints[j]}}, ie);
            integ_detail += (integ_detail.empty() ? "" : "; ") + std::string("d=") + std::to_string(d) + " t=" +
                            fmt(ec.checkpoints[j]) + ": " + fmt(ie.value) + " +- " + fmt(ie.std_error) + " (z " + fmt(z) + ")";
            // additive and derivative means pooled over directions, as diagnostics
            RunningStats wm, zm;
            for (Eigen::Index q = 0; q < K; ++q) {
                wm.add(W[j][std::size_t(q)].mean());
                zm.add(Z[j][std::size_t(q)].mean());
            }
            rows.push_back({{"t", ec.checkpoints[j]},
                            {"shaved_integrated", to_json(ie)},
                            {"target", target},
                            {"z", z},
                            {"W_mean_over_directions", wm.mean()},
                            {"Z_mean_over_directions", zm.mean()},
                            {"positive_Z_fraction", positive[j].mean()}});
        }
        double pair_max = 0.0;
        for (const auto& dj : diff)
            for (const auto& s : dj) {
                const double se = s.std_error();
                const double z = se > 0 ? std::abs(s.mean()) / se : (s.mean() == 0.0 ? 0.0 : INFINITY);
                pair_max = std::max(pair_max, z);
            }
        if (!(pair_max <= k)) const_ok = false;
        worst_pair = std::max(worst_pair, pair_max);
        per_dim.push_back({{"d", d},
                           {"directions", K},
                           {"checkpoints", ec.checkpoints},
                           {"rows", rows},
                           {"max_paired_z", pair_max},
                           {"fallbacks", fallbacks},
                           {"mean_oscillation_Z", osc.count() ? osc.mean() : 0.0}});
        ctx.log("d=" + std::to_string(d) + " max paired |z| " + fmt(pair_max));
    }
    ctx.summary()["R00"] = to_json(R00);
    ctx.summary()["dimensions"] = per_dim;
    ctx.check("shaved_mean_constant", const_ok,
              "largest per-direction |mean difference| between consecutive checkpoints = " + fmt(worst_pair) +
                  " paired stderr (limit " + fmt(k) + ")",
              {{"max_z", worst_pair}});
    ctx.check("shaved_integrated_mean", integ_ok,
              "target R(0,0) * int f = " + fmt(R00.value) + " * int f (R00 stderr " + fmt(R00.std_error) + "); " + integ_detail,
              {{"max_z", worst_integ}});
}

}  // namespace bbmlab::detail
