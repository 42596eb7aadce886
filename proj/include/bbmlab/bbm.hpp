#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <optional>
#include <string>
#include <vector>

#include "bbmlab/barrier.hpp"
#include "bbmlab/rng.hpp"
#include "bbmlab/sphere.hpp"
#include "bbmlab/stats.hpp"

namespace bbmlab {

/// Particles alive at one checkpoint, stored column-wise.
struct Population {
    double time = 0.0;
    int dim = 1;
    std::vector<std::int64_t> ids;
    std::vector<std::int64_t> parent_ids;  ///< -1 for the root
    std::vector<double> birth_times;
    Eigen::MatrixXd positions;  ///< d x N
    /// K x N running max of <X_s, theta_k> - sqrt2 s - phi(s) over the ancestry; empty unless
    /// directional shaving is active. A particle belongs to N_t^{phi,theta_k} iff its entry is <= 0.
    Eigen::MatrixXf overshoot;
    std::string overshoot_signature;  ///< grid signature | barrier description
    std::uint64_t killed_count = 0;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool has_overshoot() const { return overshoot.size() > 0; }
};

enum class KillingMode { none, radial, directional };

struct EngineConfig {
    int d = 1;
    double horizon = 0.0;             ///< absolute end time
    std::vector<double> checkpoints;  ///< absolute times; empty means {horizon}
    double dt = 0.01;                 ///< motion grid when killing or monitoring is active
    KillingMode killing = KillingMode::none;
    /// radial: remove when |X_s| >= sqrt2 s + phi(s) + radial_C.
    /// directional: track overshoots against sqrt2 s + phi(s) on `grid`.
    std::optional<Barrier> barrier;
    double radial_C = 0.0;
    std::shared_ptr<const SphereGrid> grid;
    bool remove_shaved = false;      ///< drop particles excluded in every direction
    bool directional_bridge = true;  ///< Brownian-bridge crossing correction per direction
    /// When set, records max over grid times and particles of |X_s| - sqrt2 s - phi(s).
    std::optional<Barrier> radial_monitor;
    std::size_t population_cap = 5'000'000;
    Eigen::VectorXd start;  ///< empty means the origin
    bool record_waits = false;

    bool uses_grid() const { return killing != KillingMode::none || radial_monitor.has_value(); }
    void validate() const;
};

struct SimulationResult {
    std::vector<Population> snapshots;  ///< one per checkpoint
    double max_radial_excess = -std::numeric_limits<double>::infinity();
    std::vector<double> waits;  ///< every exponential branch wait drawn, when recorded
    std::uint64_t branchings = 0;
};

/// One replicate of binary BBM from a single particle at time 0.
/// Throws ResourceError (naming the time reached) if the population exceeds the cap.
SimulationResult simulate(const RngStream& rng, const EngineConfig& cfg);

/// Continues a snapshot from init.time to cfg.horizon. Branch clocks are redrawn (memoryless).
/// Overshoots are carried over when present and recomputed from current positions otherwise.
SimulationResult simulate_from(const RngStream& rng, const EngineConfig& cfg, const Population& init);

/// Signature stored on populations tracked against (grid, barrier).
std::string overshoot_signature(const SphereGrid& g, const Barrier& b);

/// sqrt2 s + phi(s): the moving level used by radial killing and directional shaving.
inline double moving_level(const Barrier& b, double s) { return 1.4142135623730951 * s + b.eval(s); }

/// Population with one particle at x (origin by default) at time t.
Population single_particle(int d, double t = 0.0, const Eigen::VectorXd& x = Eigen::VectorXd());

struct ConfinementResult {
    std::vector<double> C_levels;
    std::vector<Estimate> frequency;  ///< fraction of replicates with max excess >= C
    std::vector<double> max_excess;   ///< per replicate
};

/// Radial exceedance of r~(s) + C, r~(s) = sqrt2 s + (d-1)/(2 sqrt2) log(1+s), on the cfg.dt grid.
/// C = -inf always counts as exceeded. Replicate i uses rng.split(i).
ConfinementResult radial_confinement_stats(const RngStream& rng, const EngineConfig& cfg,
                                           const std::vector<double>& C_levels, double horizon,
                                           std::uint64_t n, int workers = 1);

/// Snapshot CSV: replicate,time,particle_id,parent_id,birth_time,x_1..x_d
void write_snapshot_csv(std::ostream& os, const std::vector<std::pair<std::uint64_t, Population>>& rows,
                        bool header = true);

}  // namespace bbmlab
