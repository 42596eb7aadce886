#pragma once

#include <Eigen/Dense>
#include <vector>

#include "bbmlab/rng.hpp"

namespace bbmlab {

/// Brownian increment over dt in d dimensions. Throws std::invalid_argument if dt <= 0 or d < 1.
Eigen::VectorXd sample_increment(RngStream& rng, double dt, int d);

/// Probability that the Brownian bridge from x0 to x1 over dt touches the chord from b0 to b1.
/// Exact for a linear barrier; 1 when either endpoint is at or above the barrier.
double bridge_upcross_prob(double x0, double x1, double b0, double b1, double dt);

/// Same probability expressed through the two gaps g0 = b0 - x0, g1 = b1 - x1.
inline double bridge_upcross_prob_gaps(double g0, double g1, double dt) {
    if (g0 <= 0.0 || g1 <= 0.0) return 1.0;
    const double e = 2.0 * g0 * g1 / dt;
    return e > 745.0 ? 0.0 : std::exp(-e);
}

/// Offset in (0, dt) of the first touch of the chord, conditional on the bridge touching it.
/// Exact: after removing the chord slope the touch time of a flat level by a bridge is an
/// inverse Gaussian in the ratio T / (dt - T).
double sample_bridge_crossing_time(RngStream& rng, double x0, double x1, double b0, double b1,
                                   double dt);

/// Inverse Gaussian with mean mu and shape lambda (Michael, Schucany and Haas).
/// mu = +inf gives the Levy limit.
double sample_inverse_gaussian(RngStream& rng, double mu, double lambda);

/// Brownian bridge midpoint between (t0, x0) and (t1, x1), component-wise.
inline double sample_bridge_point(RngStream& rng, double t0, double x0, double t1, double x1,
                                  double t) {
    const double w = (t - t0) / (t1 - t0);
    return x0 + w * (x1 - x0) + std::sqrt((t - t0) * (t1 - t) / (t1 - t0)) * rng.normal();
}

/// Time-indexed sequence of positions; column j of values is the position at times[j].
struct PathGrid {
    std::vector<double> times;
    Eigen::MatrixXd values;

    int dimension() const { return int(values.rows()); }
    std::size_t size() const { return times.size(); }
    /// Throws std::invalid_argument unless times is strictly increasing and matches values.
    void validate() const;
};

}  // namespace bbmlab
