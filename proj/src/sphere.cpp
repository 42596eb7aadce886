#include "bbmlab/sphere.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "bbmlab/rng.hpp"

namespace bbmlab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double sphere_area(int d) {
    if (d < 1) throw std::invalid_argument("sphere_area: d must be >= 1");
    return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
}

std::string SphereGrid::signature() const {
    std::ostringstream os;
    os << scheme << "/d" << dim << "/K" << size();
    // a cheap content hash keeps seeded Monte Carlo grids distinguishable
    std::uint64_t h = 1469598103934665603ull;
    for (Eigen::Index k = 0; k < directions.size(); ++k) {
        const double v = directions.data()[k];
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof v);
        std::memcpy(&bits, &v, sizeof v);
        h = (h ^ bits) * 1099511628211ull;
    }
    os << "/" << std::hex << h;
    return os.str();
}

void SphereGrid::validate() const {
    if (directions.rows() != dim || weights.size() != directions.cols())
        throw std::invalid_argument("SphereGrid: shape mismatch");
    for (Eigen::Index k = 0; k < directions.cols(); ++k)
        if (std::abs(directions.col(k).norm() - 1.0) > 1e-12) throw std::invalid_argument("SphereGrid: non-unit direction");
    if (std::abs(weights.sum() - sphere_area(dim)) > 1e-6 * sphere_area(dim))
        throw std::invalid_argument("SphereGrid: weights do not sum to the sphere area");
    if (f_values.size() != 0 && f_values.size() != directions.cols())
        throw std::invalid_argument("SphereGrid: f_values length mismatch");
}

SphereGrid make_sphere_grid(int d, int count, std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("make_sphere_grid: d must be >= 1");
    SphereGrid g;
    g.dim = d;
    if (d == 1) {
        if (count != 0 && count != 2) throw std::invalid_argument("make_sphere_grid: d = 1 has exactly two directions");
        g.directions.resize(1, 2);
        g.directions << 1.0, -1.0;
        g.weights = Eigen::VectorXd::Ones(2);
        g.scheme = "atoms";
    } else if (d == 2) {
        const int K = count > 0 ? count : 64;
        g.directions.resize(2, K);
        for (int k = 0; k < K; ++k) {
            const double a = 2.0 * kPi * k / K;
            g.directions(0, k) = std::cos(a);
            g.directions(1, k) = std::sin(a);
        }
        g.weights = Eigen::VectorXd::Constant(K, 2.0 * kPi / K);
        g.scheme = "equispaced";
    } else if (d == 3) {
        const int K = count > 0 ? count : 256;
        g.directions.resize(3, K);
        const double golden = kPi * (3.0 - std::sqrt(5.0));
        for (int k = 0; k < K; ++k) {
            const double z = 1.0 - (2.0 * k + 1.0) / K;
            const double r = std::sqrt(1.0 - z * z);
            g.directions(0, k) = r * std::cos(golden * k);
            g.directions(1, k) = r * std::sin(golden * k);
            g.directions(2, k) = z;
        }
        g.weights = Eigen::VectorXd::Constant(K, 4.0 * kPi / K);
        g.scheme = "fibonacci";
    } else {
        const int K = count > 0 ? count : 512;
        RngStream r(seed, 0x5fe7e);
        g.directions.resize(d, K);
        for (int k = 0; k < K; ++k) {
            for (int i = 0; i < d; ++i) g.directions(i, k) = r.normal();
            g.directions.col(k).normalize();
        }
        g.weights = Eigen::VectorXd::Constant(K, sphere_area(d) / K);
        g.scheme = "monte-carlo";
    }
    return g;
}

Eigen::VectorXd test_function(const SphereGrid& g, TestFunction f) {
    switch (f) {
        case TestFunction::constant: return Eigen::VectorXd::Ones(g.size());
        case TestFunction::hemisphere: return (g.directions.row(0).array() >= 0.0).cast<double>().transpose();
        case TestFunction::first_harmonic: return g.directions.row(0).transpose();
    }
    return Eigen::VectorXd::Ones(g.size());
}

Eigen::Index nearest_direction(const SphereGrid& g, const Eigen::VectorXd& u) {
    Eigen::Index k = 0;
    (g.directions.transpose() * u).maxCoeff(&k);
    return k;
}

}  // namespace bbmlab
