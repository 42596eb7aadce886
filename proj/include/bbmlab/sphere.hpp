#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bbmlab {

/// Surface area of the unit sphere in R^d (2 for d = 1, counting the two atoms).
double sphere_area(int d);

/// Directions theta_k (columns) with quadrature weights summing to the sphere area.
struct SphereGrid {
    int dim = 1;
    Eigen::MatrixXd directions;  ///< d x K, unit columns
    Eigen::VectorXd weights;     ///< K
    Eigen::VectorXd f_values;    ///< optional test function on the grid (empty if unset)
    std::string scheme;

    Eigen::Index size() const { return directions.cols(); }
    /// Stable signature used to match cached overshoots with the grid that produced them.
    std::string signature() const;
    /// Throws std::invalid_argument unless directions are unit and weights sum to the area.
    void validate() const;
};

/// Default grids: d = 1 -> {+1, -1}; d = 2 -> `count` equispaced angles (64);
/// d = 3 -> `count` Fibonacci-lattice points (256); d > 3 -> `count` Monte Carlo directions (512).
SphereGrid make_sphere_grid(int d, int count = 0, std::uint64_t seed = 0);

enum class TestFunction { constant, hemisphere, first_harmonic };

/// Values of a built-in test function on the grid: 1, 1{theta_1 >= 0}, or theta_1.
Eigen::VectorXd test_function(const SphereGrid& g, TestFunction f);

/// sum_k values_k f_k w_k, with f = 1 when `f` is empty. Length mismatch -> invalid_argument.
template <class Derived>
double sphere_integrate(const Eigen::MatrixBase<Derived>& values, const SphereGrid& g,
                        const Eigen::VectorXd& f = Eigen::VectorXd()) {
    if (values.size() != g.size()) throw std::invalid_argument("sphere_integrate: values do not match the grid");
    if (f.size() == 0) return values.dot(g.weights);
    if (f.size() != g.size()) throw std::invalid_argument("sphere_integrate: f does not match the grid");
    return values.cwiseProduct(f).dot(g.weights);
}

/// Index of the grid direction closest to the unit vector u (largest inner product).
Eigen::Index nearest_direction(const SphereGrid& g, const Eigen::VectorXd& u);

}  // namespace bbmlab
