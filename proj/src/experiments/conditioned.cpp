#include <algorithm>
#include <cmath>

#include "bbmlab/errors.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

// log(-B_t) / log t; endpoints at or above 0 map to a large negative value so they sort first.
std::vector<double> fluctuation_exponents(const std::vector<double>& endpoints, double t) {
    std::vector<double> out;
    out.reserve(endpoints.size());
    for (double v : endpoints) out.push_back(v < 0.0 ? std::log(-v) / std::log(t) : -1e9);
    return out;
}

}  // namespace

void run_conditioned(RunContext& ctx) {
    const Config& c = ctx.cfg;
    const Barrier b = barrier_from(c);
    const StepPolicy pol = step_policy_from(c);
    const double t = c.num("conditioned.t"), sf = c.num("conditioned.s_factor");
    if (!(t > 1.0)) throw ConfigError("conditioned.t", "must be > 1");
    if (!(sf >= 1.0)) throw ConfigError("conditioned.s_factor", "must be >= 1");
    const std::uint64_t n = c.count("conditioned.n_accept");
    const std::uint64_t max_att = c.count("conditioned.max_attempts");

    const ConditionedEndpoints ep = sample_conditioned_endpoints(ctx.rng.split(10), b, t, sf * t, n, pol, ctx.workers, max_att);
    const std::vector<double> ex = fluctuation_exponents(ep.values, t);
    const double med = quantile(ex, 0.5);
    {
        auto w = ctx.csv("conditioned_endpoints.csv", {"index", "t", "s", "B_t", "exponent"});
        for (std::size_t i = 0; i < ep.values.size(); ++i)
            w.cell(std::uint64_t(i)).cell(t).cell(sf * t).cell(ep.values[i]).cell(ex[i]).end_row();
    }
    json fl{{"t", t}, {"s", sf * t}, {"n", n}, {"median_exponent", med}, {"attempts", ep.attempts},
            {"acceptance_rate", ep.acceptance_rate()}};
    if (c.flag("conditioned.s_doubling")) {
        const ConditionedEndpoints ep2 =
            sample_conditioned_endpoints(ctx.rng.split(11), b, t, 2 * sf * t, n, pol, ctx.workers, max_att);
        const double med2 = quantile(fluctuation_exponents(ep2.values, t), 0.5);
        fl["median_exponent_doubled_s"] = med2;
        fl["doubled_s"] = 2 * sf * t;
        ctx.log("median exponent " + fmt(med) + ", with doubled s " + fmt(med2));
    }
    ctx.summary()["fluctuation"] = fl;
    const auto [mlo, mhi] = ctx.band("acceptance.median_band");
    ctx.check("fluctuation_median", med >= mlo && med <= mhi,
              "median log(-B_t)/log t = " + fmt(med) + " at t = " + fmt(t) + " over " + std::to_string(n) +
                  " accepted paths (band [" + fmt(mlo) + ", " + fmt(mhi) + "], acceptance rate " +
                  fmt(ep.acceptance_rate()) + ")",
              fl);

    const std::vector<double> tt = c.nums("conditioned.tail_times");
    const std::vector<std::uint64_t> tn = c.counts("conditioned.tail_n");
    if (tt.empty()) return;
    if (tt.size() != tn.size()) throw ConfigError("conditioned.tail_n", "must match tail_times in length");
    const double xs = c.num("conditioned.tail_x");
    std::vector<double> logt, counts, expo;
    json rows = json::array();
    auto w = ctx.csv("conditioned_tail.csv", {"t", "s", "n", "threshold", "count", "frequency", "attempts"});
    for (std::size_t i = 0; i < tt.size(); ++i) {
        if (!(tt[i] > 1.0)) throw ConfigError("conditioned.tail_times", "times must be > 1");
        const ConditionedEndpoints e =
            sample_conditioned_endpoints(ctx.rng.split(20 + i), b, tt[i], sf * tt[i], tn[i], pol, ctx.workers, max_att);
        const double thr = b.eval(tt[i]) - xs;
        const double k = double(std::count_if(e.values.begin(), e.values.end(), [&](double v) { return v >= thr; }));
        logt.push_back(std::log(tt[i]));
        counts.push_back(k);
        expo.push_back(double(tn[i]));
        rows.push_back({{"t", tt[i]}, {"n", tn[i]}, {"count", k}, {"frequency", k / double(tn[i])}});
        w.cell(tt[i]).cell(sf * tt[i]).cell(tn[i]).cell(thr).cell(k).cell(k / double(tn[i])).cell(e.attempts).end_row();
        ctx.log("tail t=" + fmt(tt[i]) + ": " + fmt(k) + " / " + std::to_string(tn[i]));
    }
    const LinearFit fit = poisson_loglinear(logt, counts, expo);
    ctx.summary()["tail"] = {{"x", xs}, {"rows", rows}, {"slope", fit.slope}, {"slope_se", fit.se_slope}};
    const auto [lo, hi] = ctx.band("acceptance.tail_slope_band");
    ctx.check("tail_decay_slope", fit.slope >= lo && fit.slope <= hi,
              "log-log slope of P(B_t >= phi(t) - " + fmt(xs) + ") = " + fmt(fit.slope) + " +- " + fmt(fit.se_slope) +
                  " (band [" + fmt(lo) + ", " + fmt(hi) + "])",
              {{"slope", fit.slope}, {"se", fit.se_slope}});
}

}  // namespace bbmlab::detail
