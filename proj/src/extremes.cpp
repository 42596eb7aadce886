#include "bbmlab/extremes.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bbmlab/errors.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"

namespace bbmlab {

namespace {
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

double centering_r(double t, int d) {
    if (!(t > 0.0)) return kNaN;
    return kSqrt2 * t + (d - 4) / (2.0 * kSqrt2) * std::log(t);
}

double centering_r_tilde(double t, int d) { return kSqrt2 * t + (d - 1) / (2.0 * kSqrt2) * std::log1p(t); }

double centering_m(double t) {
    if (!(t > 0.0)) return kNaN;
    return kSqrt2 * t - 3.0 / (2.0 * kSqrt2) * std::log(t);
}

ExtremeRecord extreme_record(const Population& pop) {
    if (pop.empty()) throw std::invalid_argument("extreme_record: empty population");
    ExtremeRecord r;
    r.time = pop.time;
    const Eigen::Index n = pop.positions.cols();
    const Eigen::VectorXd norms = pop.positions.colwise().norm();
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < n; ++j) {
        const std::size_t a = std::size_t(j), b = std::size_t(best);
        if (norms[j] > norms[best] || (norms[j] == norms[best] && pop.ids[a] < pop.ids[b])) best = j;
    }
    r.R = norms[best];
    r.argmax_id = pop.ids[std::size_t(best)];
    r.direction = r.R > 0.0 ? Eigen::VectorXd(pop.positions.col(best) / r.R) : Eigen::VectorXd::Zero(pop.dim);
    r.M_plus = pop.positions.row(0).maxCoeff();
    r.M_minus = pop.positions.row(0).minCoeff();
    r.r_t = centering_r(pop.time, pop.dim);
    r.r_tilde_t = centering_r_tilde(pop.time, pop.dim);
    r.m_t = centering_m(pop.time);
    return r;
}

double gumbel_cdf(double x, double location, double scale) { return std::exp(-std::exp(-(x - location) / scale)); }

double gumbel_quantile(double p, double location, double scale) { return location - scale * std::log(-std::log(p)); }

GumbelFit gumbel_fit(const std::vector<double>& samples) {
    const std::size_t n = samples.size();
    if (n < 30) throw std::invalid_argument("gumbel_fit: need at least 30 samples");
    const double mean = sample_mean(samples);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = samples[i] - mean;
    const double sd = std::sqrt(sample_variance(samples));
    if (!(sd > 0.0)) throw DegenerateError("gumbel_fit: samples have zero variance");
    const double ymin = *std::min_element(y.begin(), y.end());

    // Profile score: beta + sum y e^{-y/beta} / sum e^{-y/beta}, increasing in beta.
    auto score = [&](double beta) {
        double num = 0.0, den = 0.0;
        for (double v : y) {
            const double e = std::exp(-(v - ymin) / beta);
            num += v * e;
            den += e;
        }
        return beta + num / den;
    };
    double lo = 1e-3 * sd, hi = 2.0 * sd;
    while (score(hi) < 0.0) hi *= 2.0;
    while (score(lo) > 0.0) lo /= 2.0;
    std::uintmax_t iters = 200;
    const auto bracket = boost::math::tools::toms748_solve(score, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                           iters);
    const double beta = 0.5 * (bracket.first + bracket.second);
    double den = 0.0;
    for (double v : y) den += std::exp(-(v - ymin) / beta);
    // location = mean - beta log(mean of e^{-y/beta})
    const double mu = mean + ymin - beta * std::log(den / double(n));

    GumbelFit f;
    f.location = mu;
    f.scale = beta;
    f.n = n;
    double ll = -double(n) * std::log(beta);
    for (double x : samples) {
        const double z = (x - mu) / beta;
        ll -= z + std::exp(-z);
    }
    f.loglik = ll;
    const auto ks = ks_test(samples, [&](double x) { return gumbel_cdf(x, mu, beta); });
    f.ks_statistic = ks.statistic;
    f.ks_p_value = ks.p_value;
    f.scale_se = beta * std::sqrt(0.6079 / double(n));
    f.location_se = beta * std::sqrt(1.1087 / double(n));
    return f;
}

Eigen::VectorXd gumbel_argmax_prob(const Eigen::VectorXd& a) {
    if (a.size() == 0) throw std::invalid_argument("gumbel_argmax_prob: empty input");
    if (!a.allFinite()) throw std::invalid_argument("gumbel_argmax_prob: entries must be finite");
    const Eigen::VectorXd e = (a.array() - a.maxCoeff()).exp();
    return e / e.sum();
}

LinearFit tail_shape_fit(const std::vector<double>& samples, double lo, double hi, double step) {
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const double n = double(sorted.size());
    std::vector<double> xs, ys;
    for (double x = lo; x <= hi + 1e-12; x += step) {
        const double above = double(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), x));
        if (above <= 0.0) continue;
        xs.push_back(x);
        ys.push_back(std::log(above / n) - std::log(x));
    }
    if (xs.size() < 3) throw DegenerateError("tail_shape_fit: too few populated thresholds");
    return ols(xs, ys);
}

JointExtremesResult joint_extremes_experiment(const RngStream& rng, const JointExtremesConfig& cfg) {
    if (!(cfg.s >= 0.0) || !(cfg.t > cfg.s)) throw std::invalid_argument("joint_extremes: need 0 <= s < t");
    const SphereGrid g1 = make_sphere_grid(1);
    EngineConfig outer_cfg;
    outer_cfg.d = 1;
    outer_cfg.horizon = cfg.s;
    outer_cfg.population_cap = cfg.population_cap;
    EngineConfig inner_cfg = outer_cfg;
    inner_cfg.horizon = cfg.t;
    const double m_t = centering_m(cfg.t);

    JointExtremesResult res;
    res.outer = parallel_map(std::size_t(cfg.n_outer), cfg.workers, [&](std::size_t i) {
        const RngStream r = rng.split(i);
        const Population pop_s = simulate(r, outer_cfg).snapshots.back();
        OuterTree o;
        const Eigen::VectorXd Z = derivative_martingale(pop_s, g1);
        o.Z_plus = Z[0];
        o.Z_minus = Z[1];
        o.size_at_s = pop_s.size();
        double wins = 0.0;
        for (std::uint64_t j = 0; j < cfg.n_inner; ++j) {
            const Population p = simulate_from(r.split(1 + j), inner_cfg, pop_s).snapshots.back();
            const double mp = p.positions.row(0).maxCoeff(), mm = p.positions.row(0).minCoeff();
            o.plus_margin.push_back(mp - m_t);
            o.minus_margin.push_back(-mm - m_t);
            o.right_wins.push_back(mp > -mm ? 1 : 0);
            wins += mp > -mm ? 1.0 : 0.0;
        }
        o.win_frequency = wins / double(cfg.n_inner);
        if (cfg.n_inner >= 30) {
            o.fit_plus = gumbel_fit(o.plus_margin);
            o.fit_minus = gumbel_fit(o.minus_margin);
        }
        return o;
    });

    auto& s = res.summary;
    std::vector<double> cp, cm, all_plus, ratio, freq;
    double within = 0.0;
    for (const auto& o : res.outer) {
        all_plus.insert(all_plus.end(), o.plus_margin.begin(), o.plus_margin.end());
        within += pearson(o.plus_margin, o.minus_margin);
        if (!(o.Z_plus > 0.0 && o.Z_minus > 0.0)) {
            ++s.excluded_outer;
            continue;
        }
        const double sp = 0.5 * kSqrt2 * std::log(o.Z_plus), sm = 0.5 * kSqrt2 * std::log(o.Z_minus);
        for (std::size_t j = 0; j < o.plus_margin.size(); ++j) {
            cp.push_back(o.plus_margin[j] - sp);
            cm.push_back(o.minus_margin[j] - sm);
        }
        ratio.push_back(o.Z_plus / (o.Z_plus + o.Z_minus));
        freq.push_back(o.win_frequency);
    }
    s.mean_within_correlation = res.outer.empty() ? 0.0 : within / double(res.outer.size());
    if (cp.size() >= 30) {
        s.corrected_plus = gumbel_fit(cp);
        s.corrected_minus = gumbel_fit(cm);
        s.correlation = pearson(cp, cm);
    }
    if (ratio.size() >= 3) s.wins_regression = ols(ratio, freq);
    if (all_plus.size() >= 30) {
        try {
            s.tail_fit = tail_shape_fit(all_plus);
        } catch (const DegenerateError&) {
            // too few exceedances at this sample size; tail_fit stays empty (n = 0)
        }
    }
    return res;
}

double ppp_expected_count(const Eigen::VectorXd& Z, const SphereGrid& grid, double c, double x_floor) {
    if (Z.size() != grid.size()) throw std::invalid_argument("ppp: Z does not match the grid");
    return c * Z.cwiseMax(0.0).dot(grid.weights) * std::exp(-kSqrt2 * x_floor) / kSqrt2;
}

std::vector<PPPAtom> sample_decorated_ppp(RngStream& rng, const Eigen::VectorXd& Z, const SphereGrid& grid, double c,
                                          double x_floor, const DecorationSampler& decoration) {
    if (!std::isfinite(x_floor)) throw std::invalid_argument("ppp: x_floor must be finite");
    if (!(c > 0.0)) throw std::invalid_argument("ppp: rate c must be positive");
    const double mean = ppp_expected_count(Z, grid, c, x_floor);
    if (!(mean > 0.0)) throw DegenerateError("ppp: intensity has no mass");
    const Eigen::VectorXd mass = Z.cwiseMax(0.0).cwiseProduct(grid.weights);
    const double total = mass.sum();
    boost::random::poisson_distribution<long, double> pois(mean);
    const long count = pois(rng);
    std::vector<PPPAtom> out;
    for (long a = 0; a < count; ++a) {
        const double u = rng.uniform() * total;
        double cum = 0.0;
        Eigen::Index k = 0;
        for (; k < mass.size() - 1; ++k) {
            cum += mass[k];
            if (u < cum) break;
        }
        const double x = x_floor + rng.exponential() / kSqrt2;
        const std::vector<double> dec = decoration ? decoration(rng) : std::vector<double>{0.0};
        for (std::size_t i = 0; i < dec.size(); ++i) {
            if (dec[i] > 0.0) throw std::invalid_argument("ppp: decoration points must be <= 0");
            out.push_back(PPPAtom{k, x + dec[i], std::size_t(a), dec[i] == 0.0});
        }
    }
    return out;
}

std::vector<double> direction_histogram(const std::vector<Eigen::VectorXd>& directions, const SphereGrid& grid) {
    std::vector<double> h(std::size_t(grid.size()), 0.0);
    for (const auto& u : directions) h[std::size_t(nearest_direction(grid, u))] += 1.0;
    return h;
}

TrendTest iqr_trend_test(const std::vector<std::vector<double>>& samples, const std::vector<double>& times,
                         RngStream rng, int bootstrap) {
    if (samples.size() != times.size() || samples.size() < 2)
        throw std::invalid_argument("iqr_trend_test: need one sample vector per time (at least two)");
    const std::size_t n = samples[0].size();
    for (const auto& s : samples)
        if (s.size() != n) throw std::invalid_argument("iqr_trend_test: samples must be aligned by replicate");
    auto iqr = [](const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); };
    TrendTest out;
    for (const auto& s : samples) out.values.push_back(iqr(s));
    out.slope = ols(times, out.values).slope;
    std::vector<double> slopes;
    std::vector<double> buf(n), vals(samples.size());
    std::vector<std::size_t> idx(n);
    for (int b = 0; b < bootstrap; ++b) {
        for (auto& i : idx) i = std::min(n - 1, std::size_t(rng.uniform() * double(n)));
        for (std::size_t m = 0; m < samples.size(); ++m) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = samples[m][idx[i]];
            vals[m] = iqr(buf);
        }
        slopes.push_back(ols(times, vals).slope);
    }
    out.se = std::sqrt(sample_variance(slopes));
    out.z = out.se > 0.0 ? out.slope / out.se : 0.0;
    out.p_value = 1.0 - normal_cdf(out.z);
    return out;
}

}  // namespace bbmlab
