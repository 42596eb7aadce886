#include "bbmlab/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <numeric>
#include <stdexcept>

namespace bbmlab {

bool Estimate::has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
}

bool agrees(const Estimate& a, const Estimate& b, double k) {
    const double se = std::hypot(a.std_error, b.std_error);
    return std::abs(a.value - b.value) <= k * se;
}

bool agrees(const Estimate& a, double exact, double k) {
    return std::abs(a.value - exact) <= k * a.std_error;
}

void RunningStats::add(double x) {
    if (!has_pivot_) {
        pivot_ = x;
        has_pivot_ = true;
    }
    const double d = x - pivot_;
    s1_.add(d);
    s2_.add(d * d);
    ++n_;
}

void RunningStats::merge(const RunningStats& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
        *this = o;
        return;
    }
    // re-centre o's sums on our pivot: sum (x - p)^2 = sum (x - q)^2 + 2 (q - p) sum (x - q) + n (q - p)^2
    const double delta = o.pivot_ - pivot_;
    const double os1 = o.s1_.value(), os2 = o.s2_.value();
    s1_.add(os1);
    s1_.add(double(o.n_) * delta);
    s2_.add(os2);
    s2_.add(2.0 * delta * os1);
    s2_.add(double(o.n_) * delta * delta);
    n_ += o.n_;
}

double RunningStats::mean() const { return n_ ? pivot_ + s1_.value() / double(n_) : 0.0; }

double RunningStats::variance() const {
    if (n_ < 2) return 0.0;
    const double s1 = s1_.value();
    const double v = (s2_.value() - s1 * s1 / double(n_)) / double(n_ - 1);
    return v > 0.0 ? v : 0.0;
}

double RunningStats::std_error() const { return n_ ? std::sqrt(variance() / double(n_)) : 0.0; }

Estimate RunningStats::estimate(const std::string& method) const {
    Estimate e;
    e.value = mean();
    e.std_error = std_error();
    e.n = n_;
    e.method = method;
    return e;
}

Estimate mean_estimate(const std::vector<double>& xs, const std::string& method) {
    RunningStats rs;
    for (double x : xs) rs.add(x);
    return rs.estimate(method);
}

double sample_mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value() / double(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
    RunningStats rs;
    for (double x : xs) rs.add(x);
    return rs.variance();
}

double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    const double h = (double(xs.size()) - 1.0) * p;
    const auto lo = std::size_t(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - double(lo)) * (xs[hi] - xs[lo]);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: bad lengths");
    const double mx = sample_mean(x), my = sample_mean(y);
    CompensatedSum sxy, sxx, syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy.add((x[i] - mx) * (y[i] - my));
        sxx.add((x[i] - mx) * (x[i] - mx));
        syy.add((y[i] - my) * (y[i] - my));
    }
    return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<>(), p); }

double chi2_sf(double stat, double dof) {
    if (stat <= 0.0) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<>(dof), stat));
}

ChiSquareResult chi_square_gof(const std::vector<double>& observed, const std::vector<double>& expected,
                               int fitted_params) {
    if (observed.size() != expected.size() || observed.size() < 2)
        throw std::invalid_argument("chi_square_gof: bad lengths");
    CompensatedSum s;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (!(expected[i] > 0.0)) throw std::invalid_argument("chi_square_gof: expected counts must be positive");
        const double d = observed[i] - expected[i];
        s.add(d * d / expected[i]);
    }
    ChiSquareResult r;
    r.statistic = s.value();
    r.dof = double(observed.size()) - 1.0 - fitted_params;
    r.p_value = chi2_sf(r.statistic, r.dof);
    return r;
}

double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 0.2) return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        s += (k % 2 ? 1.0 : -1.0) * term;
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

KSResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
    if (xs.empty()) throw std::invalid_argument("ks_test: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = double(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (double(i) + 1.0) / n - f, f - double(i) / n});
    }
    KSResult r;
    r.statistic = d;
    r.n = xs.size();
    const double sn = std::sqrt(n);
    r.p_value = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    return r;
}

LinearFit ols(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w) {
    const std::size_t n = x.size();
    if (y.size() != n || n < 2 || (!w.empty() && w.size() != n)) throw std::invalid_argument("ols: bad lengths");
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd Y(n), W = Eigen::VectorXd::Ones(n);
    for (std::size_t i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x[i];
        Y[i] = y[i];
        if (!w.empty()) W[i] = w[i];
    }
    const Eigen::MatrixXd XtW = X.transpose() * W.asDiagonal();
    const Eigen::Matrix2d A = XtW * X;
    const Eigen::Vector2d beta = A.ldlt().solve(XtW * Y);
    LinearFit f;
    f.intercept = beta[0];
    f.slope = beta[1];
    f.n = n;
    const Eigen::VectorXd r = Y - X * beta;
    const Eigen::Matrix2d Ainv = A.inverse();
    if (w.empty()) {
        const double s2 = n > 2 ? r.squaredNorm() / double(n - 2) : 0.0;
        f.se_intercept = std::sqrt(s2 * Ainv(0, 0));
        f.se_slope = std::sqrt(s2 * Ainv(1, 1));
    } else {
        // weights are inverse variances
        f.se_intercept = std::sqrt(Ainv(0, 0));
        f.se_slope = std::sqrt(Ainv(1, 1));
    }
    return f;
}

LinearFit poisson_loglinear(const std::vector<double>& x, const std::vector<double>& counts,
                            const std::vector<double>& exposure) {
    const std::size_t n = x.size();
    if (counts.size() != n || exposure.size() != n || n < 2)
        throw std::invalid_argument("poisson_loglinear: bad lengths");
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n), off(n);
    for (std::size_t i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x[i];
        y[i] = counts[i];
        off[i] = std::log(exposure[i]);
    }
    // start from a least-squares fit of log((y + 0.5) / exposure)
    Eigen::VectorXd z0(n);
    for (std::size_t i = 0; i < n; ++i) z0[i] = std::log((y[i] + 0.5)) - off[i];
    Eigen::Vector2d beta = (X.transpose() * X).ldlt().solve(X.transpose() * z0);
    Eigen::Matrix2d info = Eigen::Matrix2d::Identity();
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd eta = X * beta + off;
        const Eigen::VectorXd mu = eta.array().exp();
        info = X.transpose() * mu.asDiagonal() * X;
        const Eigen::Vector2d score = X.transpose() * (y - mu);
        const Eigen::Vector2d step = info.ldlt().solve(score);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-12) break;
    }
    const Eigen::VectorXd mu = (X * beta + off).array().exp();
    info = X.transpose() * mu.asDiagonal() * X;
    const Eigen::Matrix2d cov = info.inverse();
    LinearFit f;
    f.intercept = beta[0];
    f.slope = beta[1];
    f.se_intercept = std::sqrt(cov(0, 0));
    f.se_slope = std::sqrt(cov(1, 1));
    f.n = n;
    return f;
}

ChiSquareResult mean_vector_test(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean0) {
    const Eigen::Index n = samples.rows(), p = samples.cols();
    if (mean0.size() != p || n <= p) throw std::invalid_argument("mean_vector_test: bad shapes");
    const Eigen::VectorXd m = samples.colwise().mean().transpose();
    const Eigen::MatrixXd c = samples.rowwise() - m.transpose();
    const Eigen::MatrixXd S = (c.transpose() * c) / double(n - 1);
    const Eigen::VectorXd d = m - mean0;
    ChiSquareResult r;
    r.statistic = double(n) * d.dot(S.ldlt().solve(d));
    r.dof = double(p);
    r.p_value = chi2_sf(r.statistic, r.dof);
    return r;
}

}  // namespace bbmlab
