#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "bbmlab/barrier.hpp"
#include "bbmlab/bbm.hpp"
#include "bbmlab/rtable.hpp"
#include "bbmlab/sphere.hpp"

namespace bbmlab {

/// W(theta_k) = sum_j exp(sqrt2 (<X_j, theta_k> - sqrt2 t)). Throws on an empty population.
Eigen::VectorXd additive_martingale(const Population& pop, const SphereGrid& grid);

/// Z(theta_k) = sum_j (sqrt2 t - <X_j, theta_k>) exp(sqrt2 (<X_j, theta_k> - sqrt2 t)).
Eigen::VectorXd derivative_martingale(const Population& pop, const SphereGrid& grid);

enum class ShavedWeight { exact, linear };

struct ShavedValues {
    Eigen::VectorXd values;
    std::uint64_t fallbacks = 0;  ///< table lookups outside the grid (served by the linear surrogate)
    std::uint64_t terms = 0;      ///< surviving (particle, direction) pairs
};

/// Z^phi(theta_k) = sum over survivors in direction k of R(y, t) e^{sqrt2 y}, y = <X_j, theta_k> - sqrt2 t.
/// exact: R from `table`, or the closed form A - y for a constant barrier when no table is given.
/// linear: phi(t) - y.
/// Throws std::invalid_argument when the population's overshoots were tracked on another grid or
/// barrier, or the table belongs to another barrier.
ShavedValues shaved_martingale(const Population& pop, const SphereGrid& grid, const Barrier& b,
                               const RTable* table, ShavedWeight weight);

struct MartingaleSnapshot {
    double time = 0.0;
    Eigen::VectorXd W, Z;
    Eigen::VectorXd Z_phi, Z_phi_linear;  ///< empty unless the population carries overshoots
    std::uint64_t fallbacks = 0;
};

MartingaleSnapshot martingale_snapshot(const Population& pop, const SphereGrid& grid,
                                       const std::optional<Barrier>& b = std::nullopt,
                                       const RTable* table = nullptr);

struct DirectionDensity {
    Eigen::VectorXd mu;            ///< probability weights on the grid
    std::vector<bool> clipped;     ///< directions whose negative value was set to 0
    double clipped_fraction = 0.0; ///< negative mass / total absolute mass
};

/// mu_k = max(Z_k, 0) w_k / sum_j max(Z_j, 0) w_j. Throws DegenerateError if sum_k Z_k w_k <= 0.
DirectionDensity direction_density(const Eigen::VectorXd& Z, const SphereGrid& grid);

/// Per-direction max - min over the last `window` rows (one row per checkpoint).
Eigen::VectorXd trajectory_oscillation(const std::vector<Eigen::VectorXd>& series, int window = 3);

}  // namespace bbmlab
