#include <cmath>

#include "bbmlab/errors.hpp"
#include "bbmlab/extremes.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

json fit_json(const GumbelFit& f) {
    return {{"location", f.location}, {"scale", f.scale}, {"scale_se", f.scale_se}, {"location_se", f.location_se},
            {"n", f.n}, {"ks_p_value", f.ks_p_value}};
}

void joint(RunContext& ctx) {
    const Config& c = ctx.cfg;
    JointExtremesConfig jc;
    jc.s = c.num("joint.s");
    jc.t = c.num("joint.t");
    if (!(jc.s > 0 && jc.s < jc.t)) throw ConfigError("joint.s", "need 0 < s < t");
    jc.n_outer = c.count("joint.n_outer");
    jc.n_inner = c.count("joint.n_inner");
    jc.population_cap = std::size_t(c.count("engine.population_cap"));
    jc.workers = ctx.workers;
    const JointExtremesResult r = joint_extremes_experiment(ctx.rng.split(1), jc);
    const JointExtremesSummary& s = r.summary;

    auto ow = ctx.csv("outer_trees.csv", {"outer", "Z_plus", "Z_minus", "size_at_s", "win_frequency", "scale_plus", "scale_minus"});
    auto mw = ctx.csv("joint_margins.csv", {"outer", "inner", "plus_margin", "minus_margin", "right_wins"});
    for (std::size_t i = 0; i < r.outer.size(); ++i) {
        const OuterTree& o = r.outer[i];
        ow.cell(std::uint64_t(i)).cell(o.Z_plus).cell(o.Z_minus).cell(std::uint64_t(o.size_at_s)).cell(o.win_frequency)
            .cell(o.fit_plus ? o.fit_plus->scale : NAN).cell(o.fit_minus ? o.fit_minus->scale : NAN).end_row();
        for (std::size_t j = 0; j < o.plus_margin.size(); ++j)
            mw.cell(std::uint64_t(i)).cell(std::uint64_t(j)).cell(o.plus_margin[j]).cell(o.minus_margin[j])
                .cell(std::int64_t(o.right_wins[j])).end_row();
    }
    // diagnostic only: a quantile-based scale, insensitive to the heavy finite-t left tail
    std::vector<double> cp, cm;
    for (const OuterTree& o : r.outer) {
        if (!(o.Z_plus > 0 && o.Z_minus > 0)) continue;
        for (std::size_t j = 0; j < o.plus_margin.size(); ++j) {
            cp.push_back(o.plus_margin[j] - std::log(o.Z_plus) / std::sqrt(2.0));
            cm.push_back(o.minus_margin[j] - std::log(o.Z_minus) / std::sqrt(2.0));
        }
    }
    const double gumbel_iqr = std::log(std::log(4.0)) - std::log(std::log(4.0 / 3.0));
    auto iqr_scale = [&](const std::vector<double>& v) {
        return v.size() < 4 ? NAN : (quantile(v, 0.75) - quantile(v, 0.25)) / gumbel_iqr;
    };
    ctx.summary()["joint"] = {{"iqr_scale_plus", iqr_scale(cp)},
                              {"iqr_scale_minus", iqr_scale(cm)},
                              {"s", jc.s},
                              {"t", jc.t},
                              {"n_outer", jc.n_outer},
                              {"n_inner", jc.n_inner},
                              {"excluded_outer", s.excluded_outer},
                              {"corrected_plus", fit_json(s.corrected_plus)},
                              {"corrected_minus", fit_json(s.corrected_minus)},
                              {"correlation", s.correlation},
                              {"mean_within_correlation", s.mean_within_correlation},
                              {"wins_regression", {{"intercept", s.wins_regression.intercept}, {"slope", s.wins_regression.slope},
                                                   {"slope_se", s.wins_regression.se_slope}}},
                              {"tail_fit", {{"slope", s.tail_fit.slope}, {"slope_se", s.tail_fit.se_slope},
                                            {"sqrt2_coefficient", -s.tail_fit.slope}}}};
    const auto [glo, ghi] = ctx.band("acceptance.gumbel_scale_band");
    const bool scale_ok = s.corrected_plus.scale >= glo && s.corrected_plus.scale <= ghi &&
                          s.corrected_minus.scale >= glo && s.corrected_minus.scale <= ghi;
    ctx.check("gumbel_scale", scale_ok,
              "Z-corrected pooled margins: scale+ = " + fmt(s.corrected_plus.scale) + " +- " + fmt(s.corrected_plus.scale_se) +
                  ", scale- = " + fmt(s.corrected_minus.scale) + " +- " + fmt(s.corrected_minus.scale_se) + " (band [" +
                  fmt(glo) + ", " + fmt(ghi) + "]; " + std::to_string(s.excluded_outer) + " outer trees excluded; quantile-based scales " +
                  fmt(iqr_scale(cp)) + ", " + fmt(iqr_scale(cm)) + " reported only)");
    const double rmax = c.num("acceptance.max_abs_correlation");
    ctx.check("margin_correlation", std::abs(s.correlation) < rmax,
              "Pearson correlation of corrected margins = " + fmt(s.correlation) + " (mean within-tree " +
                  fmt(s.mean_within_correlation) + "; limit " + fmt(rmax) + ")");
    const auto [wlo, whi] = ctx.band("acceptance.wins_slope_band");
    ctx.check("wins_regression_slope", s.wins_regression.slope >= wlo && s.wins_regression.slope <= whi,
              "slope of right-wins frequency on Z+/(Z+ + Z-) = " + fmt(s.wins_regression.slope) + " +- " +
                  fmt(s.wins_regression.se_slope) + " (band [" + fmt(wlo) + ", " + fmt(whi) + "])");
}

void argmax_formula(RunContext& ctx) {
    const Config& c = ctx.cfg;
    const std::vector<double> av = c.nums("joint.argmax_a");
    if (av.size() < 2) throw ConfigError("joint.argmax_a", "need at least two entries");
    const std::uint64_t n = c.count("joint.argmax_draws");
    const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(av.data(), Eigen::Index(av.size()));
    const Eigen::VectorXd p = gumbel_argmax_prob(a);
    std::vector<double> wins(av.size(), 0.0);
    RngStream r = ctx.rng.split(2);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double top = -INFINITY;
        for (std::size_t j = 0; j < av.size(); ++j) {
            const double gval = av[j] - std::log(-std::log(r.uniform()));
            if (gval > top) {
                top = gval;
                best = j;
            }
        }
        wins[best] += 1.0;
    }
    const double k = ctx.k_sigma();
    bool ok = true;
    std::string det;
    auto w = ctx.csv("argmax_formula.csv", {"index", "a", "formula", "mc_frequency", "mc_stderr", "z"});
    for (std::size_t j = 0; j < av.size(); ++j) {
        const double f = wins[j] / double(n), pj = p[Eigen::Index(j)];
        const double se = std::sqrt(pj * (1 - pj) / double(n));
        const double z = se > 0 ? (f - pj) / se : 0.0;
        if (!(std::abs(z) <= k)) ok = false;
        det += (det.empty() ? "" : "; ") + fmt(pj) + " vs " + fmt(f) + " (z " + fmt(z) + ")";
        w.cell(std::uint64_t(j)).cell(av[j]).cell(pj).cell(f).cell(se).cell(z).end_row();
    }
    const double sum_err = std::abs(p.sum() - 1.0), tol = c.num("acceptance.sum_tolerance");
    ctx.summary()["argmax_formula"] = {{"a", av}, {"formula", std::vector<double>(p.data(), p.data() + p.size())},
                                     {"draws", n}, {"sum_error", sum_err}};
    ctx.check("argmax_formula_mc", ok, "formula vs direct MC over " + std::to_string(n) + " Gumbel draws: " + det);
    ctx.check("argmax_sums_to_one", sum_err <= tol, "|sum - 1| = " + fmt(sum_err) + " (tolerance " + fmt(tol) + ")");
}

}  // namespace

void run_extremes_1d(RunContext& ctx) {
    const nlohmann::json& arr = ctx.cfg.doc().at("joint").at("checks");
    for (const auto& v : arr) {
        const std::string s = v.is_string() ? v.get<std::string>() : "";
        if (s == "joint")
            joint(ctx);
        else if (s == "argmax")
            argmax_formula(ctx);
        else
            throw ConfigError("joint.checks", "unknown check (joint, argmax)");
    }
}

}  // namespace bbmlab::detail
