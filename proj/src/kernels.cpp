#include "bbmlab/kernels.hpp"

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bbmlab {

double RngStream::normal() {
    boost::random::normal_distribution<double> nd;
    return nd(*this);
}

double RngStream::exponential() {
    boost::random::exponential_distribution<double> ed;
    return ed(*this);
}

Eigen::VectorXd sample_increment(RngStream& rng, double dt, int d) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("sample_increment: dt must be positive");
    if (d < 1) throw std::invalid_argument("sample_increment: dimension must be >= 1");
    Eigen::VectorXd v(d);
    const double s = std::sqrt(dt);
    for (int i = 0; i < d; ++i) v[i] = s * rng.normal();
    return v;
}

double bridge_upcross_prob(double x0, double x1, double b0, double b1, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("bridge_upcross_prob: dt must be positive");
    return bridge_upcross_prob_gaps(b0 - x0, b1 - x1, dt);
}

double sample_inverse_gaussian(RngStream& rng, double mu, double lambda) {
    const double z = rng.normal();
    const double y = z * z;
    if (!std::isfinite(mu)) return lambda / y;  // Levy limit
    // x = mu / (1 + r + sqrt(r^2 + 2r)) is the cancellation-free form of the usual root.
    const double r = mu * y / (2.0 * lambda);
    const double x = mu / (1.0 + r + std::sqrt(r * r + 2.0 * r));
    return rng.uniform() * (mu + x) <= mu ? x : mu * mu / x;
}

double sample_bridge_crossing_time(RngStream& rng, double x0, double x1, double b0, double b1,
                                   double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("sample_bridge_crossing_time: dt must be positive");
    const double a = b0 - x0;
    if (a <= 0.0) return 0.0;
    // Relative to the chord the bridge runs from 0 to y against the flat level a.
    const double y = x1 - x0 - (b1 - b0);
    // c is the endpoint gap b1 - x1; it may be negative when the bridge ends above the chord.
    const double c = std::abs(a - y);
    // W = T / (dt - T) has density proportional to w^{-3/2} exp(-(c^2 w + a^2 / w) / (2 dt)).
    const double mu = c > 0.0 ? a / c : std::numeric_limits<double>::infinity();
    const double lambda = a * a / dt;
    const double w = sample_inverse_gaussian(rng, mu, lambda);
    double t = dt * w / (1.0 + w);
    if (!(t > 0.0)) t = std::numeric_limits<double>::min();
    if (t >= dt) t = std::nextafter(dt, 0.0);
    return t;
}

void PathGrid::validate() const {
    if (std::size_t(values.cols()) != times.size())
        throw std::invalid_argument("PathGrid: times and values differ in length");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw std::invalid_argument("PathGrid: times not strictly increasing");
}

}  // namespace bbmlab
