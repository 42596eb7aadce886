#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bbmlab/barrier.hpp"
#include "bbmlab/kernels.hpp"
#include "bbmlab/rng.hpp"
#include "bbmlab/stats.hpp"

namespace bbmlab {

class RTable;

/// Step-size rule for killed paths. A step starting at relative time u (absolute time t0 + u) is
///   min(max_rel * (1 + t0 + u), sqrt(8 chord_tol / |phi''|)), floored at dt,
/// so the chord replacing the curved barrier over one step is within chord_tol of it.
/// Steps always land on requested checkpoints. `refine` splits each step into 2^refine
/// bridge-sampled substeps; with the same stream this is a coupled dt-halving.
struct StepPolicy {
    double dt = 1e-2;
    double chord_tol = 1e-4;
    double max_rel = 0.05;
    int refine = 0;

    void validate() const;
};

/// Barrier values on the step grid of one path family (shared by all paths from one cell).
struct StepGrid {
    std::vector<double> u;      ///< coarse times relative to the start, u[0] = 0
    std::vector<double> level;  ///< barrier (plus slope * u) at u
    std::vector<double> fine_u, fine_level;  ///< 2^refine substeps per coarse step
    std::vector<int> checkpoint_index;       ///< coarse index of each requested checkpoint
    int substeps = 1;
};

StepGrid make_step_grid(const Barrier& b, double slope, double horizon,
                        const std::vector<double>& checkpoints, const StepPolicy& policy);

struct HittingRecord {
    double tau = 0.0;        ///< hitting time, or the horizon when censored
    double hit_value = 0.0;  ///< B at the hitting time (barrier level there)
    bool censored = false;
    double start_x = 0.0;
    double end_x = 0.0;  ///< B at the horizon when censored
    Barrier barrier = Barrier::constant(1.0);
};

/// First passage of B (started at x) over the shifted barrier; with drift = sqrt 2 the barrier is
/// sqrt(2) u + phi(u) and B carries that drift.
HittingRecord sample_hitting(RngStream& rng, const Barrier& b, double x, double drift,
                             const StepPolicy& policy, double horizon);

/// Fraction of paths from x not killed by b before s. Path i uses rng.split(i).
Estimate estimate_survival(const RngStream& rng, const Barrier& b, double x, double s, std::uint64_t n,
                           const StepPolicy& policy, int workers = 1);

enum class RMethod { survival, novikov };

/// How a Novikov path still alive at the horizon contributes.
///   bare: phi(T), the plain lower-bound surrogate.
///   flat: phi(T) plus the exact overshoot expectation for a barrier frozen at phi(T); still a lower
///         bound, but much tighter.
enum class TailCorrection { bare, flat };

struct REstimateConfig {
    RMethod method = RMethod::novikov;
    std::vector<double> s_ladder{100.0, 200.0, 400.0};
    double ladder_tol = 0.05;
    std::uint64_t n = 10000;
    StepPolicy policy;
    /// Absolute censoring time for Novikov paths. Cells at different t share it, which makes the
    /// truncated estimator an exact space-time martingale.
    double horizon = 1e4;
    TailCorrection tail = TailCorrection::flat;
    bool control_variate = true;
    double censor_flag_fraction = 0.01;
    int workers = 1;
};

struct REstimateResult {
    Estimate estimate;
    std::vector<Estimate> ladder;          ///< survival method: one per rung
    std::optional<double> ladder_change;    ///< relative change between the last two rungs
    std::optional<double> extrapolated;     ///< Aitken extrapolation of the ladder, diagnostic only
    double censored_fraction = 0.0;
};

/// R^phi(x, t_offset). Path i uses rng.split(i).
REstimateResult estimate_R(const RngStream& rng, const Barrier& b, double x, double t_offset,
                           const REstimateConfig& cfg);

/// int_0^inf phi'(u0 + v) erf(D / sqrt(2 v)) dv: expected barrier increase after u0 until a
/// Brownian motion at distance D below the flat level phi(u0) first reaches it.
double flat_overshoot_integral(const Barrier& b, double u0, double D);

/// Same quantity served from a cached spline in log(1 + D) built once per (barrier, u0).
double flat_overshoot_tabulated(const Barrier& b, double u0, double D);

struct ConditionedSample {
    PathGrid path;
    std::uint64_t attempts = 0;
};

/// Rejection sampler: paths from 0 conditioned on surviving to s, restricted to [0, t].
/// Throws ResourceError when max_attempts is exhausted.
ConditionedSample sample_conditioned_path(const RngStream& rng, const Barrier& b, double t, double s,
                                          const StepPolicy& policy, std::uint64_t max_attempts = 10'000'000);

struct ConditionedEndpoints {
    std::vector<double> values;  ///< B_t of accepted paths, in attempt order
    std::uint64_t attempts = 0;
    double acceptance_rate() const { return attempts ? double(values.size()) / double(attempts) : 0.0; }
};

/// n_accept endpoints B_t under the rejection sampler; deterministic for any worker count.
ConditionedEndpoints sample_conditioned_endpoints(const RngStream& rng, const Barrier& b, double t, double s,
                                                  std::uint64_t n_accept, const StepPolicy& policy,
                                                  int workers = 1, std::uint64_t max_attempts = 100'000'000);

struct UchiyamaReport {
    double integral1 = 0.0;  ///< int_1^t phi(u) u^{-3/2} du
    double integral2 = 0.0;  ///< int_1^t phi(u)^2 u^{-2} du
    double bound_shape = 0.0;
};

UchiyamaReport uchiyama_diagnostic(const Barrier& b, double x, double t, double C = 1.0);

struct MartingaleCheck {
    std::vector<double> checkpoints;
    std::vector<Estimate> means;
    double coverage = 1.0;  ///< fraction of alive lookups served by the table
    std::uint64_t fallbacks = 0;
};

/// Mean of R(B_t, t) 1{alive} at each checkpoint, paths from (0, 0).
MartingaleCheck verify_R_martingale(const RngStream& rng, const Barrier& b, const RTable& table,
                                    const std::vector<double>& checkpoints, std::uint64_t n,
                                    const StepPolicy& policy, int workers = 1);

/// Mean of V_t = R(B_t - sqrt2 t, t) / R(0,0) 1{B_u < sqrt2 u + phi(u), u <= t} exp(sqrt2 B_t - t)
/// under driftless paths; equals 1 for every t.
MartingaleCheck verify_drifted_change_of_measure(const RngStream& rng, const Barrier& b, const RTable& table,
                                                 const std::vector<double>& checkpoints, std::uint64_t n,
                                                 const StepPolicy& policy, int workers = 1);

}  // namespace bbmlab
