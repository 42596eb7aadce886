#include <cmath>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/extremes.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"
#include "bbmlab/spine.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

// Smallest k with P(|N_t| <= k) >= 1/2 for the geometric law with success probability e^{-t}.
std::size_t geometric_median(double t) {
    const double q = 1.0 - std::exp(-t);
    return std::size_t(std::ceil(std::log(0.5) / std::log(q)));
}

}  // namespace

void run_spine_check(RunContext& ctx) {
    const Config& c = ctx.cfg;
    const Barrier b = barrier_from(c);
    const RTable& tab = ctx.shared_table();
    const double t = c.num("spine.t");
    if (!(t > 0)) throw ConfigError("spine.t", "must be > 0");
    ChangeOfMeasureConfig cm;
    cm.engine = engine_from(c);
    cm.engine.horizon = t;
    cm.engine.checkpoints = {t};
    cm.spine.d = cm.engine.d;
    cm.spine.horizon = t;
    cm.spine.dt = cm.engine.dt;
    const std::int64_t K = c.integer("spine.candidates");
    if (K < 1) throw ConfigError("spine.candidates", "must be >= 1");
    cm.spine.candidates = int(K);
    cm.spine.population_cap = cm.engine.population_cap;
    cm.n_spine = c.count("spine.n_spine");
    cm.n_plain = c.count("spine.n_plain");
    cm.workers = ctx.workers;
    const SphereGrid& g = *cm.engine.grid;
    const Eigen::VectorXd f = test_function(g, test_function_from(c, "spine.test_function"));

    const std::string fn = c.str("spine.functional");
    PopulationFunctional F;
    std::string label;
    if (fn == "one") {
        F = [](const Population&) { return 1.0; };
        label = "F = 1";
    } else if (fn == "count_at_most") {
        const std::int64_t kc = c.integer("spine.k");
        const std::size_t k = kc < 0 ? geometric_median(t) : std::size_t(kc);
        F = [k](const Population& p) { return p.size() <= k ? 1.0 : 0.0; };
        label = "F = 1{|N_t| <= " + std::to_string(k) + "}";
        ctx.summary()["k"] = k;
    } else {
        throw ConfigError("spine.functional", "expected one or count_at_most");
    }
    const ChangeOfMeasureResult r = change_of_measure_check(ctx.rng.split(1), cm, b, g, f, tab, t, F);
    const double k = ctx.k_sigma();
    const double se = std::sqrt(r.spine_side.std_error * r.spine_side.std_error +
                                r.plain_side.std_error * r.plain_side.std_error);
    const double gap = r.spine_side.value - r.plain_side.value;
    const bool agree = se > 0 ? std::abs(gap) <= k * se : gap == 0.0;
    const double zb = r.inter_branch.std_error > 0 ? (r.inter_branch.value - 0.5) / r.inter_branch.std_error : INFINITY;

    auto w = ctx.csv("spine_check.csv", {"quantity", "value", "stderr", "n"});
    for (const auto& [name, e] : {std::pair<std::string, Estimate>{"spine_side", r.spine_side},
                                  {"plain_side", r.plain_side},
                                  {"inter_branch_mean", r.inter_branch}}) {
        w.cell(name).cell(e.value).cell(e.std_error).cell(e.n).end_row();
        ctx.record("change_of_measure_check", {{"quantity", name}, {"t", t}, {"functional", label}}, e);
    }
    ctx.summary()["change_of_measure"] = {{"functional", label},
                                          {"spine_side", to_json(r.spine_side)},
                                          {"plain_side", to_json(r.plain_side)},
                                          {"inter_branch", to_json(r.inter_branch)},
                                          {"R00", r.R00},
                                          {"fallbacks", r.fallbacks}};
    ctx.check("change_of_measure_agree", agree,
              label + ": spine " + fmt(r.spine_side.value) + " +- " + fmt(r.spine_side.std_error) + " vs plain " +
                  fmt(r.plain_side.value) + " +- " + fmt(r.plain_side.std_error) + " (z " +
                  fmt(se > 0 ? gap / se : 0.0) + ")");
    ctx.check("spine_branch_rate", std::abs(zb) <= k,
              "inter-branch mean " + fmt(r.inter_branch.value) + " +- " + fmt(r.inter_branch.std_error) +
                  " vs 0.5 (z " + fmt(zb) + ")");
}

void run_ppp_sample(RunContext& ctx) {
    const Config& c = ctx.cfg;
    const double rate = c.num("ppp.c"), floor = c.num("ppp.x_floor");
    if (!(rate > 0)) throw ConfigError("ppp.c", "must be > 0");
    const std::uint64_t n = c.count("ppp.samples");
    const std::vector<double> deco = c.nums("ppp.decoration");
    for (double y : deco)
        if (y > 0) throw ConfigError("ppp.decoration", "decoration points must be <= 0");
    EngineConfig ec = engine_from(c);
    const SphereGrid& g = *ec.grid;
    Eigen::VectorXd Z;
    const std::string src = c.str("ppp.z_source");
    if (src == "constant") {
        Z = Eigen::VectorXd::Ones(g.size());
    } else if (src == "derivative") {
        ec.killing = KillingMode::none;
        ec.checkpoints = {ec.horizon};
        Z = derivative_martingale(simulate(ctx.rng.split(1), ec).snapshots.back(), g);
    } else {
        throw ConfigError("ppp.z_source", "expected constant or derivative");
    }
    DecorationSampler ds;
    if (!deco.empty()) ds = [deco](RngStream&) { return deco; };
    const double expected = ppp_expected_count(Z, g, rate, floor);
    RunningStats count;
    const std::uint64_t keep = std::uint64_t(std::max<std::int64_t>(0, c.integer("ppp.write_atoms")));
    std::vector<std::string> hdr{"sample", "cluster", "direction_index", "x", "is_root"};
    auto w = ctx.csv("ppp_atoms.csv", hdr);
    auto cw = ctx.csv("ppp_counts.csv", {"sample", "roots", "points"});
    RngStream r = ctx.rng.split(2);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto atoms = sample_decorated_ppp(r, Z, g, rate, floor, ds);
        // every cluster carries at least one point, so the last cluster index gives the Poisson count
        const std::uint64_t roots = atoms.empty() ? 0 : std::uint64_t(atoms.back().cluster) + 1;
        if (i < keep)
            for (const auto& a : atoms)
                w.cell(i).cell(std::uint64_t(a.cluster)).cell(std::int64_t(a.direction)).cell(a.x).cell(std::int64_t(a.is_root)).end_row();
        count.add(double(roots));
        cw.cell(i).cell(roots).cell(std::uint64_t(atoms.size())).end_row();
    }
    const Estimate e = count.estimate("ppp_roots");
    ctx.record("sample_decorated_ppp", {{"c", rate}, {"x_floor", floor}, {"z_source", src}}, e);
    const double z = e.std_error > 0 ? (e.value - expected) / e.std_error : (e.value == expected ? 0.0 : INFINITY);
    ctx.summary()["ppp"] = {{"expected_count", expected}, {"mean_count", to_json(e)}, {"z", z}, {"decoration", deco}};
    ctx.check("ppp_mean_count", std::abs(z) <= ctx.k_sigma(),
              "mean Poisson atom count " + fmt(e.value) + " +- " + fmt(e.std_error) + " vs intensity mass " + fmt(expected));
}

}  // namespace bbmlab::detail
