#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bbmlab/bbm.hpp"
#include "bbmlab/rng.hpp"
#include "bbmlab/sphere.hpp"
#include "bbmlab/stats.hpp"

namespace bbmlab {

/// sqrt2 t + (d-4)/(2 sqrt2) log t; NaN for t <= 0.
double centering_r(double t, int d);
/// sqrt2 t + (d-1)/(2 sqrt2) log(1+t)
double centering_r_tilde(double t, int d);
/// sqrt2 t - 3/(2 sqrt2) log t; NaN for t <= 0.
double centering_m(double t);

struct ExtremeRecord {
    double time = 0.0;
    double R = 0.0;             ///< max |X_j|
    Eigen::VectorXd direction;  ///< X/|X| of the argmax (lowest id on ties); zero if R = 0
    std::int64_t argmax_id = -1;
    double M_plus = 0.0, M_minus = 0.0;  ///< max / min of the first coordinate
    double r_t = 0.0, r_tilde_t = 0.0, m_t = 0.0;
};

/// Throws std::invalid_argument for an empty population.
ExtremeRecord extreme_record(const Population& pop);

struct GumbelFit {
    double location = 0.0;
    double scale = 1.0;
    std::size_t n = 0;
    double loglik = 0.0;
    double ks_statistic = 0.0;  ///< sup distance to the fitted cdf
    double ks_p_value = 1.0;
    double scale_se = 0.0;     ///< asymptotic, sqrt(0.6079/n) scale
    double location_se = 0.0;  ///< asymptotic, sqrt(1.1087/n) scale
};

/// Maximum likelihood for the max-Gumbel law exp(-exp(-(x - location)/scale)).
/// Throws std::invalid_argument for n < 30 and DegenerateError for zero variance.
GumbelFit gumbel_fit(const std::vector<double>& samples);

double gumbel_cdf(double x, double location, double scale);
double gumbel_quantile(double p, double location, double scale);

/// softmax: P(argmax_i (a_i + G_i) = i) for i.i.d. standard Gumbel G_i.
Eigen::VectorXd gumbel_argmax_prob(const Eigen::VectorXd& a);

struct JointExtremesConfig {
    double s = 4.0;
    double t = 12.0;
    std::uint64_t n_outer = 50;
    std::uint64_t n_inner = 200;
    std::size_t population_cap = 5'000'000;
    int workers = 1;
};

struct OuterTree {
    double Z_plus = 0.0, Z_minus = 0.0;  ///< derivative martingales at s in directions +1 and -1
    std::size_t size_at_s = 0;
    std::vector<double> plus_margin, minus_margin;  ///< M+_t - m_t and -M-_t - m_t per continuation
    std::vector<char> right_wins;                   ///< M+_t > -M-_t
    double win_frequency = 0.0;
    std::optional<GumbelFit> fit_plus, fit_minus;
};

struct JointExtremesSummary {
    std::size_t excluded_outer = 0;  ///< outer trees with Z_s^+ <= 0 or Z_s^- <= 0
    GumbelFit corrected_plus, corrected_minus;  ///< margins minus (sqrt2/2) log Z_s^{+/-}
    double correlation = 0.0;                   ///< Pearson of the corrected margins
    double mean_within_correlation = 0.0;       ///< mean of per-outer Pearson coefficients
    LinearFit wins_regression;                  ///< win frequency on Z+/(Z+ + Z-)
    LinearFit tail_fit;  ///< log P(M+ - m_t > x) - log x on x in [1, 4]; slope estimates -sqrt2
};

struct JointExtremesResult {
    std::vector<OuterTree> outer;
    JointExtremesSummary summary;
};

/// Two-stage experiment in d = 1: outer tree i uses rng.split(i) up to s; continuation j of it
/// uses rng.split(i).split(1 + j) from the frozen time-s snapshot up to t.
JointExtremesResult joint_extremes_experiment(const RngStream& rng, const JointExtremesConfig& cfg);

/// Least-squares fit of log P(X > x) - log x against x over thresholds in [lo, hi].
LinearFit tail_shape_fit(const std::vector<double>& samples, double lo = 1.0, double hi = 4.0, double step = 0.25);

struct PPPAtom {
    Eigen::Index direction = 0;  ///< grid index
    double x = 0.0;
    std::size_t cluster = 0;  ///< index of the Poisson atom that generated this point
    bool is_root = false;
};

using DecorationSampler = std::function<std::vector<double>(RngStream&)>;

/// Atoms of a decorated Poisson process with intensity c Z(theta) sigma(dtheta) e^{-sqrt2 x} dx
/// restricted to x > x_floor. Negative Z entries are clipped to 0. Each Poisson atom at (theta, x)
/// is replaced by {x + y : y in decoration}; the default decoration is the single point 0.
/// Throws DegenerateError when the clipped intensity has no mass and invalid_argument for a
/// decoration point above 0.
std::vector<PPPAtom> sample_decorated_ppp(RngStream& rng, const Eigen::VectorXd& Z, const SphereGrid& grid, double c,
                                          double x_floor, const DecorationSampler& decoration = {});

/// Expected number of Poisson atoms (before decoration).
double ppp_expected_count(const Eigen::VectorXd& Z, const SphereGrid& grid, double c, double x_floor);

/// Counts of directions by nearest grid direction.
std::vector<double> direction_histogram(const std::vector<Eigen::VectorXd>& directions, const SphereGrid& grid);

struct TrendTest {
    double slope = 0.0;
    double se = 0.0;        ///< bootstrap standard error
    double z = 0.0;
    double p_value = 1.0;   ///< one-sided, H1: slope > 0
    std::vector<double> values;  ///< statistic at each time
};

/// Slope of the interquartile range of samples[m] (one vector per time, aligned by replicate)
/// against times, with a paired bootstrap over replicates.
TrendTest iqr_trend_test(const std::vector<std::vector<double>>& samples, const std::vector<double>& times,
                         RngStream rng, int bootstrap = 500);

}  // namespace bbmlab
