#include <cmath>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/extremes.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"
#include "context.hpp"

using nlohmann::json;

namespace bbmlab::detail {

namespace {

struct Replicate {
    Eigen::Index argmax = -1;
    double R = 0.0;
    double integral = 0.0;  ///< <Z, 1> (or <Z^phi, 1>)
    bool degenerate = false;
    Eigen::VectorXd mu;
    bool clipped = false;
};

}  // namespace

void run_direction_measure(RunContext& ctx) {
    const Config& c = ctx.cfg;
    EngineConfig ec = engine_from(c);
    ec.checkpoints = {ec.horizon};
    const std::string source = c.str("direction.source");
    const RTable* tab = nullptr;
    std::optional<Barrier> b;
    if (source == "shaved") {
        b = barrier_from(c);
        ec.killing = KillingMode::directional;
        ec.barrier = b;
        if (b->family() != BarrierFamily::constant) tab = &ctx.shared_table();
    } else if (source != "derivative") {
        throw ConfigError("direction.source", "expected derivative or shaved");
    }
    if (ec.d < 2) throw ConfigError("engine.d", "direction-measure needs d >= 2");
    const SphereGrid& g = *ec.grid;
    const Eigen::Index K = g.size();
    const std::uint64_t n = c.count("replicates");
    const double alpha = c.num("acceptance.test_alpha");
    const double sigma = g.weights.sum();

    const auto reps = parallel_map(std::size_t(n), ctx.workers, [&](std::size_t i) {
        const SimulationResult r = simulate(ctx.rng.split(i), ec);
        const Population& p = r.snapshots.back();
        Replicate out;
        const ExtremeRecord er = extreme_record(p);
        out.R = er.R;
        if (er.R > 0) out.argmax = nearest_direction(g, er.direction);
        const Eigen::VectorXd Z = source == "shaved" ? shaved_martingale(p, g, *b, tab, ShavedWeight::exact).values
                                                     : derivative_martingale(p, g);
        out.integral = sphere_integrate(Z, g);
        try {
            const DirectionDensity dd = direction_density(Z, g);
            out.mu = dd.mu;
            out.clipped = dd.clipped_fraction > 0.0;
        } catch (const DegenerateError&) {
            out.degenerate = true;
        }
        return out;
    });

    // argmax-direction uniformity
    std::vector<double> hist(static_cast<std::size_t>(K), 0.0), expected(static_cast<std::size_t>(K));
    std::size_t used = 0;
    for (const auto& r : reps)
        if (r.argmax >= 0) {
            hist[std::size_t(r.argmax)] += 1.0;
            ++used;
        }
    for (Eigen::Index q = 0; q < K; ++q) expected[std::size_t(q)] = double(used) * g.weights[q] / sigma;
    const ChiSquareResult argmax_chi = chi_square_gof(hist, expected);

    // ensemble mean of mu-hat, tested on coarse bins (one bin dropped: the masses sum to 1)
    const int B = int(c.integer("direction.coarse_bins"));
    if (B < 2 || B > K) throw ConfigError("direction.coarse_bins", "must lie in [2, grid size]");
    const SphereGrid coarse = make_sphere_grid(ec.d, B, std::uint64_t(c.integer("grid.seed")) + 1);
    std::vector<Eigen::Index> bin(static_cast<std::size_t>(K));
    Eigen::VectorXd bin_mass = Eigen::VectorXd::Zero(B);
    for (Eigen::Index q = 0; q < K; ++q) {
        bin[std::size_t(q)] = nearest_direction(coarse, g.directions.col(q));
        bin_mass[bin[std::size_t(q)]] += g.weights[q] / sigma;
    }
    std::vector<const Replicate*> ok;
    std::size_t degenerate = 0, positive = 0, clipped = 0;
    for (const auto& r : reps) {
        if (r.integral > 0.0) ++positive;
        if (r.degenerate) {
            ++degenerate;
            continue;
        }
        if (r.clipped) ++clipped;
        ok.push_back(&r);
    }
    Eigen::MatrixXd S(Eigen::Index(ok.size()), B - 1);
    Eigen::VectorXd mu_mean = Eigen::VectorXd::Zero(K), mu_sq = Eigen::VectorXd::Zero(K);
    for (std::size_t i = 0; i < ok.size(); ++i) {
        Eigen::VectorXd agg = Eigen::VectorXd::Zero(B);
        for (Eigen::Index q = 0; q < K; ++q) agg[bin[std::size_t(q)]] += ok[i]->mu[q];
        S.row(Eigen::Index(i)) = agg.head(B - 1).transpose();
        mu_mean += ok[i]->mu;
        mu_sq += ok[i]->mu.cwiseAbs2();
    }
    ChiSquareResult mu_test;
    bool mu_valid = Eigen::Index(ok.size()) > B;
    if (mu_valid) mu_test = mean_vector_test(S, bin_mass.head(B - 1));
    const double nn = double(std::max<std::size_t>(ok.size(), 1));
    mu_mean /= nn;

    {
        std::vector<std::string> hdr{"direction_index"};
        for (int a = 0; a < ec.d; ++a) hdr.push_back("theta_" + std::to_string(a + 1));
        for (const char* h : {"weight", "mu_hat", "mu_hat_stderr", "uniform", "argmax_count", "argmax_expected"}) hdr.push_back(h);
        auto w = ctx.csv("direction_density.csv", hdr);
        for (Eigen::Index q = 0; q < K; ++q) {
            w.cell(std::int64_t(q));
            for (int a = 0; a < ec.d; ++a) w.cell(g.directions(a, q));
            const double var = ok.size() > 1 ? (mu_sq[q] / nn - mu_mean[q] * mu_mean[q]) * nn / (nn - 1) : 0.0;
            w.cell(g.weights[q]).cell(mu_mean[q]).cell(std::sqrt(std::max(var, 0.0) / nn)).cell(g.weights[q] / sigma)
                .cell(hist[std::size_t(q)]).cell(expected[std::size_t(q)]).end_row();
        }
        auto rw = ctx.csv("direction_replicates.csv", {"replicate", "R_t", "argmax_direction", "Z_integral", "degenerate"});
        for (std::size_t i = 0; i < reps.size(); ++i)
            rw.cell(std::uint64_t(i)).cell(reps[i].R).cell(std::int64_t(reps[i].argmax)).cell(reps[i].integral)
                .cell(std::int64_t(reps[i].degenerate)).end_row();
    }

    const double pos_frac = double(positive) / double(reps.size());
    const double pos_min = c.num("acceptance.positivity_fraction");
    ctx.summary()["direction"] = {{"source", source},
                                  {"d", ec.d},
                                  {"t", ec.horizon},
                                  {"replicates", n},
                                  {"argmax_chi2", {{"statistic", argmax_chi.statistic}, {"dof", argmax_chi.dof}, {"p_value", argmax_chi.p_value}}},
                                  {"mu_test", {{"statistic", mu_test.statistic}, {"dof", mu_test.dof}, {"p_value", mu_test.p_value}, {"bins", B}}},
                                  {"degenerate", degenerate},
                                  {"clipped_replicates", clipped},
                                  {"positive_fraction", pos_frac}};
    ctx.check("argmax_direction_uniform", argmax_chi.p_value >= alpha,
              "chi2 = " + fmt(argmax_chi.statistic) + " on " + fmt(argmax_chi.dof) + " dof, p = " + fmt(argmax_chi.p_value) +
                  " (" + std::to_string(K) + " directions, alpha " + fmt(alpha) + ")");
    ctx.check("mu_hat_uniform", mu_valid && mu_test.p_value >= alpha,
              "ensemble mean of mu-hat vs uniform on " + std::to_string(B) + " bins: statistic " + fmt(mu_test.statistic) +
                  " on " + fmt(mu_test.dof) + " dof, p = " + fmt(mu_test.p_value) + "; " + std::to_string(degenerate) +
                  " degenerate replicates excluded");
    ctx.check("integral_positive", pos_frac >= pos_min,
              "<Z_t, 1> > 0 in " + fmt(100.0 * pos_frac) + "% of " + std::to_string(reps.size()) + " replicates (need " +
                  fmt(100.0 * pos_min) + "%)");
}

}  // namespace bbmlab::detail
