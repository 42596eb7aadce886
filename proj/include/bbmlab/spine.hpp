#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bbmlab/barrier.hpp"
#include "bbmlab/bbm.hpp"
#include "bbmlab/rtable.hpp"
#include "bbmlab/sphere.hpp"
#include "bbmlab/stats.hpp"

namespace bbmlab {

struct SpineConfig {
    int d = 1;
    double horizon = 1.0;
    double dt = 0.01;
    int candidates = 32;  ///< K in the resampling filter
    std::size_t population_cap = 5'000'000;
    std::optional<Eigen::VectorXd> theta0;  ///< fixed spine direction; otherwise drawn from f

    void validate() const;
};

struct SpineTree {
    Population population;  ///< spine (id 0) plus every spine child's subtree at the horizon
    std::int64_t spine_id = 0;
    Eigen::VectorXd theta0;
    Eigen::Index theta_index = -1;  ///< grid index when theta0 was drawn from f
    std::vector<double> branch_times;
    std::vector<double> grid_times;
    std::vector<double> spine_projection;  ///< <Xi_s, theta0> - sqrt2 s at grid_times
};

/// Spine tree under the size-biased law. The projection y_s = <Xi_s, theta0> - sqrt2 s is a
/// Brownian motion h-transformed by R(y, s); it is sampled by a K-candidate filter that proposes
/// free increments, weights by R(y', s')/R(y, s) times survival (with a bridge check) and
/// resamples systematically every step. The spine branches at rate 2 and each child starts an
/// ordinary BBM. Throws ResourceError if every candidate dies.
SpineTree sample_spine_tree(const RngStream& rng, const SpineConfig& cfg, const Barrier& b,
                            const SphereGrid& grid, const Eigen::VectorXd& f, const RTable& table);

using PopulationFunctional = std::function<double(const Population&)>;

struct ChangeOfMeasureConfig {
    SpineConfig spine;
    EngineConfig engine;  ///< plain side; killing is forced to directional on `grid`
    std::uint64_t n_spine = 10000;
    std::uint64_t n_plain = 10000;
    int workers = 1;
};

struct ChangeOfMeasureResult {
    Estimate spine_side;  ///< E^f[F]
    Estimate plain_side;  ///< E[F <Z_t^phi, f>] / R(0,0)
    Estimate inter_branch;  ///< mean spine inter-branch time (rate 2 gives 0.5)
    double R00 = 0.0;
    std::uint64_t fallbacks = 0;
    bool agree = false;  ///< within 3 combined standard errors
};

/// f is normalized internally so that sum_k f_k w_k = 1.
ChangeOfMeasureResult change_of_measure_check(const RngStream& rng, const ChangeOfMeasureConfig& cfg,
                                              const Barrier& b, const SphereGrid& grid, const Eigen::VectorXd& f,
                                              const RTable& table, double t, const PopulationFunctional& F);

}  // namespace bbmlab
