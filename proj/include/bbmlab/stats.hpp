#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bbmlab {

/// Monte Carlo scalar: value, standard error (sample sd / sqrt n), count, method label, flags.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t n = 0;
    std::string method;
    std::vector<std::string> flags;

    bool has_flag(const std::string& f) const;
};

/// |a - b| <= k * sqrt(se_a^2 + se_b^2)
bool agrees(const Estimate& a, const Estimate& b, double k = 3.0);
bool agrees(const Estimate& a, double exact, double k = 3.0);

/// Neumaier compensated sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Streaming mean / variance with compensated sums around a pivot (the first value).
class RunningStats {
public:
    void add(double x);
    void merge(const RunningStats& o);
    std::uint64_t count() const { return n_; }
    double mean() const;
    double variance() const;  // unbiased
    double std_error() const;
    Estimate estimate(const std::string& method) const;

private:
    std::uint64_t n_ = 0;
    double pivot_ = 0.0;
    bool has_pivot_ = false;
    CompensatedSum s1_, s2_;
};

/// Mean estimate of a vector of samples, summed in index order.
Estimate mean_estimate(const std::vector<double>& xs, const std::string& method = "mean");
double sample_mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);
double quantile(std::vector<double> xs, double p);  // linear interpolation (type 7)
double pearson(const std::vector<double>& x, const std::vector<double>& y);

double normal_cdf(double x);
double normal_quantile(double p);
double chi2_sf(double stat, double dof);

struct ChiSquareResult {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
};
/// Goodness of fit of integer counts against expected counts (both the same length).
ChiSquareResult chi_square_gof(const std::vector<double>& observed, const std::vector<double>& expected,
                               int fitted_params = 0);

struct KSResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};
/// One-sample Kolmogorov-Smirnov against a continuous cdf; asymptotic p-value.
KSResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf);
double kolmogorov_sf(double lambda);

struct LinearFit {
    double intercept = 0.0, slope = 0.0;
    double se_intercept = 0.0, se_slope = 0.0;
    std::size_t n = 0;
};
/// Ordinary least squares y = a + b x (optionally weighted by w).
LinearFit ols(const std::vector<double>& x, const std::vector<double>& y,
              const std::vector<double>& w = {});

/// Poisson log-link regression: counts_i ~ Poisson(exposure_i * exp(a + b x_i)), fitted by IRLS.
/// Handles zero counts; used for log-frequency slopes.
LinearFit poisson_loglinear(const std::vector<double>& x, const std::vector<double>& counts,
                            const std::vector<double>& exposure);

/// Quadratic-form test that the mean vector of the rows of `samples` equals `mean0`
/// (chi-square approximation of Hotelling's T^2).
ChiSquareResult mean_vector_test(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean0);

}  // namespace bbmlab
