#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bbmlab/barrier.hpp"
#include "bbmlab/killed_bm.hpp"
#include "bbmlab/rng.hpp"

namespace bbmlab {

struct RTableMeta {
    std::string method = "novikov";
    double dt = 0.0;
    std::uint64_t n = 0;
    double horizon = 0.0;
    std::string note;
};

/// Immutable grid of R^phi(x, t) estimates.
///
/// Rows follow x_grid (strictly decreasing), columns follow t_grid (strictly increasing).
/// Interpolation is linear in the distance D = phi(t) - x along each column, with the exact
/// knot R = 0 at D = 0, then linear in t. Queries outside the grid fall back to the linear
/// surrogate phi(t) - x and are reported as fallbacks.
class RTable {
public:
    RTable(Barrier b, std::vector<double> x_grid, std::vector<double> t_grid, Eigen::MatrixXd values,
           Eigen::MatrixXd std_errors, RTableMeta meta = {});

    struct Lookup {
        double value = 0.0;
        bool fallback = false;
    };

    Lookup lookup(double x, double t) const;
    double operator()(double x, double t) const { return lookup(x, t).value; }

    const Barrier& barrier() const { return barrier_; }
    const std::vector<double>& x_grid() const { return x_grid_; }
    const std::vector<double>& t_grid() const { return t_grid_; }
    const Eigen::MatrixXd& values() const { return values_; }
    const Eigen::MatrixXd& std_errors() const { return std_errors_; }
    const RTableMeta& meta() const { return meta_; }

    /// Largest R / (1 + phi(t) - x) over estimated cells: the empirical constant of the upper bound.
    double fitted_upper_constant() const;

    struct SandwichReport {
        bool lower_ok = true;
        double worst_lower_z = 0.0;  ///< most negative (R - D) / se
        double fitted_C = 0.0;
    };
    SandwichReport sandwich() const;

    void write_csv(const std::string& path) const;
    static RTable read_csv(const std::string& path);

private:
    double column_value(Eigen::Index j, double D, bool& out_of_range) const;

    Barrier barrier_;
    std::vector<double> x_grid_, t_grid_;
    Eigen::MatrixXd values_, std_errors_;
    RTableMeta meta_;
    std::vector<std::vector<double>> col_D_, col_R_;  // per column, increasing D with the zero knot
};

/// Estimates every cell with estimate_R (cell k uses rng.split(k)); cells with x >= phi(t) are 0.
/// Throws std::runtime_error if a cell violates the lower bound by more than 3 standard errors.
RTable build_rtable(const RngStream& rng, const Barrier& b, const std::vector<double>& x_grid,
                    const std::vector<double>& t_grid, const REstimateConfig& cfg);

}  // namespace bbmlab
