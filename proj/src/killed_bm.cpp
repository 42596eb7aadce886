#include "bbmlab/killed_bm.hpp"

#include <algorithm>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

#include "bbmlab/errors.hpp"
#include "bbmlab/parallel.hpp"
#include "bbmlab/rtable.hpp"

namespace bbmlab {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kSqrtHalfPi = 1.2533141373155002512;  // sqrt(pi / 2)
constexpr std::uint64_t kChunk = 2048;
// Streams derived from a path's main stream: bridge refinement points and crossing times.
constexpr std::uint64_t kBridgeStream = 1, kTimeStream = 2;
// 2 g0 g1 / dt beyond which a bridge touch is treated as impossible (e^{-50} ~ 2e-22).
constexpr double kFarExponent = 50.0;

struct PathOut {
    bool hit = false;
    double tau = 0.0;
    double x_end = 0.0;
    bool flat_hit = false;
    double flat_tau = 0.0;
};

struct PathArgs {
    const StepGrid* grid = nullptr;
    double x0 = 0.0;
    bool track_flat = false;
    double flat_level = 0.0;
    double* checkpoints_out = nullptr;  // x at each checkpoint, NaN once killed
    PathGrid* record = nullptr;
    double record_until = 0.0;
};

// Crossing probabilities of the substeps of coarse step i, given the sampled fine points.
// Returns the index of the first substep whose cumulative kill probability reaches U, or -1.
int first_crossing(const double* lv, const double* fu, const double* fx, int m, double U, double flat,
                   bool use_flat) {
    double keep = 1.0;
    for (int j = 0; j < m; ++j) {
        const double b0 = use_flat ? flat : lv[j], b1 = use_flat ? flat : lv[j + 1];
        const double p = bridge_upcross_prob_gaps(b0 - fx[j], b1 - fx[j + 1], fu[j + 1] - fu[j]);
        keep *= 1.0 - p;
        if (U < 1.0 - keep) return j;
    }
    return -1;
}

PathOut run_path(RngStream& rng, const PathArgs& a) {
    const StepGrid& g = *a.grid;
    PathOut out;
    const std::size_t n = g.u.size();
    const int m = g.substeps;
    double x = a.x0;
    std::size_t next_cp = 0;
    const std::size_t ncp = g.checkpoint_index.size();
    auto write_cp = [&](std::size_t idx, double v) {
        while (next_cp < ncp && std::size_t(g.checkpoint_index[next_cp]) <= idx) {
            if (a.checkpoints_out) a.checkpoints_out[next_cp] = std::size_t(g.checkpoint_index[next_cp]) == idx ? v : std::numeric_limits<double>::quiet_NaN();
            ++next_cp;
        }
    };
    auto kill_rest = [&] {
        for (; next_cp < ncp; ++next_cp)
            if (a.checkpoints_out) a.checkpoints_out[next_cp] = std::numeric_limits<double>::quiet_NaN();
    };
    if (a.record) {
        a.record->times.clear();
        a.record->times.push_back(0.0);
    }
    std::vector<double> rec_x;
    if (a.record) rec_x.push_back(x);

    if (x >= g.level[0]) {
        out.hit = true;
        out.tau = 0.0;
        out.flat_hit = true;
        out.flat_tau = 0.0;
        kill_rest();
        if (a.record) a.record->values = Eigen::Map<Eigen::RowVectorXd>(rec_x.data(), Eigen::Index(rec_x.size()));
        return out;
    }
    write_cp(0, x);

    std::optional<RngStream> bridge_rng, time_rng;
    auto brng = [&]() -> RngStream& {
        if (!bridge_rng) bridge_rng.emplace(rng.split(kBridgeStream));
        return *bridge_rng;
    };
    auto trng = [&]() -> RngStream& {
        if (!time_rng) time_rng.emplace(rng.split(kTimeStream));
        return *time_rng;
    };
    const bool want_flat = a.track_flat;
    std::vector<double> fx(std::size_t(m) + 1);

    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double du = g.u[i + 1] - g.u[i];
        const double x1 = x + std::sqrt(du) * rng.normal();
        const double U = rng.uniform();
        const double g0 = g.level[i] - x, g1 = g.level[i + 1] - x1;
        const bool flat_live = want_flat && !out.flat_hit;
        const double f0 = a.flat_level - x, f1 = a.flat_level - x1;
        const bool near_chord = g1 <= 0.0 || 2.0 * g0 * g1 / du < kFarExponent;
        const bool near_flat = flat_live && (f1 <= 0.0 || 2.0 * f0 * f1 / du < kFarExponent);

        if (near_chord || near_flat) {
            if (m == 1) {
                if (flat_live) {
                    const double pf = bridge_upcross_prob_gaps(f0, f1, du);
                    if (U < pf) {
                        out.flat_hit = true;
                        out.flat_tau = g.u[i] + sample_bridge_crossing_time(trng(), x, x1, a.flat_level, a.flat_level, du);
                    }
                }
                const double pc = bridge_upcross_prob_gaps(g0, g1, du);
                if (U < pc) {
                    out.hit = true;
                    out.tau = g.u[i] + sample_bridge_crossing_time(trng(), x, x1, g.level[i], g.level[i + 1], du);
                }
            } else {
                const double* fu = &g.fine_u[i * std::size_t(m)];
                const double* lv = &g.fine_level[i * std::size_t(m)];
                fx[0] = x;
                fx[std::size_t(m)] = x1;
                RngStream& br = brng();
                for (int j = 1; j < m; ++j)
                    fx[std::size_t(j)] = sample_bridge_point(br, fu[j - 1], fx[std::size_t(j) - 1], fu[m], x1, fu[j]);
                if (flat_live) {
                    const int jf = first_crossing(lv, fu, fx.data(), m, U, a.flat_level, true);
                    if (jf >= 0) {
                        out.flat_hit = true;
                        out.flat_tau = fu[jf] + sample_bridge_crossing_time(trng(), fx[std::size_t(jf)], fx[std::size_t(jf) + 1],
                                                                            a.flat_level, a.flat_level, fu[jf + 1] - fu[jf]);
                    }
                }
                const int jc = first_crossing(lv, fu, fx.data(), m, U, 0.0, false);
                if (jc >= 0) {
                    out.hit = true;
                    out.tau = fu[jc] + sample_bridge_crossing_time(trng(), fx[std::size_t(jc)], fx[std::size_t(jc) + 1], lv[jc],
                                                                   lv[jc + 1], fu[jc + 1] - fu[jc]);
                }
            }
            if (out.hit) {
                kill_rest();
                if (a.record) a.record->values = Eigen::Map<Eigen::RowVectorXd>(rec_x.data(), Eigen::Index(rec_x.size()));
                return out;
            }
        }
        x = x1;
        write_cp(i + 1, x);
        if (a.record && g.u[i + 1] <= a.record_until) {
            a.record->times.push_back(g.u[i + 1]);
            rec_x.push_back(x);
        }
    }
    out.tau = g.u.back();
    out.x_end = x;
    if (a.record) a.record->values = Eigen::Map<Eigen::RowVectorXd>(rec_x.data(), Eigen::Index(rec_x.size()));
    return out;
}

// Chunked parallel reduction over paths; chunk partials are merged in index order so the result
// does not depend on the worker count.
template <class PathFn>
std::vector<RunningStats> reduce_paths(std::uint64_t n, int workers, std::size_t nstats, PathFn&& fn) {
    const std::uint64_t nchunks = (n + kChunk - 1) / kChunk;
    auto partials = parallel_map(std::size_t(nchunks), workers, [&](std::size_t c) {
        std::vector<RunningStats> st(nstats);
        const std::uint64_t lo = c * kChunk, hi = std::min<std::uint64_t>(n, lo + kChunk);
        for (std::uint64_t i = lo; i < hi; ++i) fn(i, st);
        return st;
    });
    std::vector<RunningStats> total(nstats);
    for (auto& p : partials)
        for (std::size_t k = 0; k < nstats; ++k) total[k].merge(p[k]);
    return total;
}

}  // namespace

void StepPolicy::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("step policy: dt must be positive");
    if (!(chord_tol > 0.0)) throw std::invalid_argument("step policy: chord_tol must be positive");
    if (!(max_rel > 0.0)) throw std::invalid_argument("step policy: max_rel must be positive");
    if (refine < 0 || refine > 8) throw std::invalid_argument("step policy: refine must be in [0, 8]");
}

StepGrid make_step_grid(const Barrier& b, double slope, double horizon, const std::vector<double>& checkpoints,
                        const StepPolicy& policy) {
    policy.validate();
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    std::vector<double> targets;
    for (double c : checkpoints) {
        if (c < 0.0 || c > horizon) throw std::invalid_argument("checkpoint outside [0, horizon]");
        targets.push_back(c);
    }
    targets.push_back(horizon);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

    StepGrid g;
    g.u.push_back(0.0);
    double u = 0.0;
    for (double target : targets) {
        while (u < target) {
            double step = policy.max_rel * (1.0 + b.shift() + u);
            const double curv = std::abs(b.second_deriv(u));
            if (curv > 0.0) step = std::min(step, std::sqrt(8.0 * policy.chord_tol / curv));
            step = std::max(step, policy.dt);
            const double rem = target - u;
            if (rem <= step * (1.0 + 1e-9)) u = target;
            else if (rem <= 1.25 * step) u += 0.5 * rem;
            else u += step;
            g.u.push_back(u);
        }
    }
    auto level = [&](double v) { return b.eval(v) + slope * v; };
    g.level.reserve(g.u.size());
    for (double v : g.u) g.level.push_back(level(v));
    for (double c : checkpoints) {
        const auto it = std::lower_bound(g.u.begin(), g.u.end(), c);
        g.checkpoint_index.push_back(int(it - g.u.begin()));
    }
    std::sort(g.checkpoint_index.begin(), g.checkpoint_index.end());
    g.substeps = 1 << policy.refine;
    if (g.substeps > 1) {
        const int m = g.substeps;
        for (std::size_t i = 0; i + 1 < g.u.size(); ++i) {
            for (int j = 0; j < m; ++j) {
                const double v = j == 0 ? g.u[i] : g.u[i] + (g.u[i + 1] - g.u[i]) * double(j) / double(m);
                g.fine_u.push_back(v);
                g.fine_level.push_back(j == 0 ? g.level[i] : level(v));
            }
        }
        // closing knot so that substep j of coarse step i can read index j + 1
        g.fine_u.push_back(g.u.back());
        g.fine_level.push_back(g.level.back());
    }
    return g;
}

HittingRecord sample_hitting(RngStream& rng, const Barrier& b, double x, double drift, const StepPolicy& policy,
                             double horizon) {
    if (!(drift == 0.0 || std::abs(drift - kSqrt2) < 1e-12))
        throw std::invalid_argument("sample_hitting: drift must be 0 or sqrt(2)");
    HittingRecord r;
    r.start_x = x;
    r.barrier = b;
    if (x >= b.eval(0.0)) {
        r.tau = 0.0;
        r.hit_value = x;
        return r;
    }
    // With drift sqrt 2 the path B_u - sqrt2 u is driftless and faces phi itself.
    const StepGrid g = make_step_grid(b, 0.0, horizon, {}, policy);
    PathArgs a;
    a.grid = &g;
    a.x0 = x;
    const PathOut o = run_path(rng, a);
    if (o.hit) {
        r.tau = o.tau;
        r.hit_value = b.eval(o.tau) + drift * o.tau;
    } else {
        r.censored = true;
        r.tau = horizon;
        r.end_x = o.x_end + drift * horizon;
        r.hit_value = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

Estimate estimate_survival(const RngStream& rng, const Barrier& b, double x, double s, std::uint64_t n,
                           const StepPolicy& policy, int workers) {
    if (n == 0) throw std::invalid_argument("estimate_survival: n must be >= 1");
    if (!(s > 0.0)) throw std::invalid_argument("estimate_survival: horizon must be positive");
    Estimate e;
    e.n = n;
    e.method = "survival";
    if (x >= b.eval(0.0)) return e;
    const StepGrid g = make_step_grid(b, 0.0, s, {}, policy);
    auto st = reduce_paths(n, workers, 1, [&](std::uint64_t i, std::vector<RunningStats>& acc) {
        RngStream r = rng.split(i);
        PathArgs a;
        a.grid = &g;
        a.x0 = x;
        acc[0].add(run_path(r, a).hit ? 0.0 : 1.0);
    });
    e.value = st[0].mean();
    e.std_error = std::sqrt(e.value * (1.0 - e.value) / double(n));
    return e;
}

double flat_overshoot_integral(const Barrier& b, double u0, double D) {
    if (!(D > 0.0) || b.family() == BarrierFamily::constant) return 0.0;
    if (b.family() == BarrierFamily::power && b.a() == 0.0) return 0.0;
    if (b.family() == BarrierFamily::log_plus && b.beta() == 0.0) return 0.0;
    auto f = [&](double v) {
        if (v <= 0.0) return b.deriv(u0);
        return b.deriv(u0 + v) * std::erf(D / std::sqrt(2.0 * v));
    };
    // split at the diffusive scale D^2 so both pieces are smooth for the quadratures
    const double split = D * D;
    const double head = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, split, 10, 1e-11);
    boost::math::quadrature::exp_sinh<double> tail;
    const double rest = tail.integrate([&](double w) { return f(split + w); }, 1e-10);
    return head + rest;
}

namespace {

// flat_overshoot_integral(b, u0, D) as a function of D alone, splined in log(1 + D).
// Novikov paths of every cell share the absolute horizon, so one table serves a whole RTable.
class FlatTailTable {
public:
    FlatTailTable(const Barrier& b, double u0) : b_(b), u0_(u0) {
        const double wmax = std::log1p(kDmax);
        const double h = wmax / double(kKnots - 1);
        std::vector<double> y(kKnots);
        for (std::size_t k = 0; k < kKnots; ++k) y[k] = flat_overshoot_integral(b, u0, std::expm1(double(k) * h));
        spline_ = std::make_unique<boost::math::interpolators::cardinal_cubic_b_spline<double>>(y.begin(), y.end(), 0.0, h);
    }
    double operator()(double D) const {
        if (!(D > 0.0)) return 0.0;
        if (D >= kDmax) return flat_overshoot_integral(b_, u0_, D);
        return (*spline_)(std::log1p(D));
    }

private:
    static constexpr double kDmax = 2000.0;
    static constexpr std::size_t kKnots = 3000;
    Barrier b_;
    double u0_;
    std::unique_ptr<boost::math::interpolators::cardinal_cubic_b_spline<double>> spline_;
};

const FlatTailTable& flat_tail_table(const Barrier& b, double u0) {
    static std::mutex mu;
    static std::map<std::pair<std::string, double>, std::unique_ptr<FlatTailTable>> cache;
    std::lock_guard<std::mutex> lk(mu);
    auto& slot = cache[{b.describe(), u0}];
    if (!slot) slot = std::make_unique<FlatTailTable>(b, u0);
    return *slot;
}

}  // namespace

double flat_overshoot_tabulated(const Barrier& b, double u0, double D) {
    if (b.family() == BarrierFamily::constant) return 0.0;
    return flat_tail_table(b, u0)(D);
}

REstimateResult estimate_R(const RngStream& rng, const Barrier& b, double x, double t_offset,
                           const REstimateConfig& cfg) {
    if (cfg.n == 0) throw std::invalid_argument("estimate_R: n must be >= 1");
    const Barrier bt = b.shifted(t_offset);
    REstimateResult res;
    Estimate& e = res.estimate;
    e.n = cfg.n;
    const double L = bt.eval(0.0);
    if (x >= L) {
        e.method = cfg.method == RMethod::novikov ? "novikov" : "survival";
        return res;
    }

    if (cfg.method == RMethod::survival) {
        if (cfg.s_ladder.empty()) throw std::invalid_argument("estimate_R: empty s_ladder");
        std::vector<double> ladder = cfg.s_ladder;
        std::sort(ladder.begin(), ladder.end());
        const StepGrid g = make_step_grid(bt, 0.0, ladder.back(), ladder, cfg.policy);
        const std::size_t k = ladder.size();
        auto st = reduce_paths(cfg.n, cfg.workers, k, [&](std::uint64_t i, std::vector<RunningStats>& acc) {
            RngStream r = rng.split(i);
            std::vector<double> cp(k);
            PathArgs a;
            a.grid = &g;
            a.x0 = x;
            a.checkpoints_out = cp.data();
            run_path(r, a);
            for (std::size_t j = 0; j < k; ++j) acc[j].add(std::isnan(cp[j]) ? 0.0 : 1.0);
        });
        for (std::size_t j = 0; j < k; ++j) {
            const double p = st[j].mean();
            const double scale = kSqrtHalfPi * std::sqrt(ladder[j]);
            Estimate r;
            r.value = scale * p;
            r.std_error = scale * std::sqrt(p * (1.0 - p) / double(cfg.n));
            r.n = cfg.n;
            r.method = "survival";
            res.ladder.push_back(r);
        }
        e = res.ladder.back();
        if (k >= 2) {
            const double prev = res.ladder[k - 2].value, last = res.ladder[k - 1].value;
            res.ladder_change = prev > 0.0 ? std::abs(last - prev) / prev : std::numeric_limits<double>::infinity();
            if (*res.ladder_change > cfg.ladder_tol) e.flags.push_back("not-stabilized");
        }
        if (k >= 3) {
            const double v1 = res.ladder[k - 3].value, v2 = res.ladder[k - 2].value, v3 = res.ladder[k - 1].value;
            const double den = (v3 - v2) - (v2 - v1);
            if (std::abs(den) > 1e-12 && (v3 - v2) * (v2 - v1) > 0.0) res.extrapolated = v3 - (v3 - v2) * (v3 - v2) / den;
        }
        return res;
    }

    // Novikov: R = E[B at the hit] - x with the shared absolute horizon.
    const double H = cfg.horizon - t_offset;
    if (!(H > 0.0)) throw std::invalid_argument("estimate_R: absolute horizon must exceed t_offset");
    const StepGrid g = make_step_grid(bt, 0.0, H, {}, cfg.policy);
    const bool cv = cfg.control_variate && bt.family() != BarrierFamily::constant;
    const double phiH = bt.eval(H);
    // the tail depends on (b, absolute horizon) only
    const bool curved = bt.family() != BarrierFamily::constant;
    const FlatTailTable* tail = curved ? &flat_tail_table(b, cfg.horizon) : nullptr;
    auto J = [&](double D) { return tail ? (*tail)(D) : 0.0; };
    const double mean_C = cv ? L + flat_overshoot_integral(bt, 0.0, L - x) : 0.0;
    auto st = reduce_paths(cfg.n, cfg.workers, 2, [&](std::uint64_t i, std::vector<RunningStats>& acc) {
        RngStream r = rng.split(i);
        PathArgs a;
        a.grid = &g;
        a.x0 = x;
        a.track_flat = cv;
        a.flat_level = L;
        const PathOut o = run_path(r, a);
        double Y;
        if (o.hit) {
            Y = bt.eval(o.tau);
        } else {
            Y = phiH;
            if (cfg.tail == TailCorrection::flat) Y += J(phiH - o.x_end);
        }
        double v = Y - x;
        if (cv) {
            const double C = o.flat_hit ? bt.eval(o.flat_tau) : phiH + J(L - o.x_end);
            v = Y - C + mean_C - x;
        }
        acc[0].add(v);
        acc[1].add(o.hit ? 0.0 : 1.0);
    });
    e = st[0].estimate("novikov");
    res.censored_fraction = st[1].mean();
    if (res.censored_fraction > cfg.censor_flag_fraction) e.flags.push_back("censoring-bias");
    return res;
}

ConditionedSample sample_conditioned_path(const RngStream& rng, const Barrier& b, double t, double s,
                                          const StepPolicy& policy, std::uint64_t max_attempts) {
    if (!(s >= t) || !(t > 0.0)) throw std::invalid_argument("sample_conditioned_path: need 0 < t <= s");
    const StepGrid g = make_step_grid(b, 0.0, s, {t}, policy);
    ConditionedSample cs;
    for (std::uint64_t i = 0; i < max_attempts; ++i) {
        RngStream r = rng.split(i);
        PathArgs a;
        a.grid = &g;
        a.x0 = 0.0;
        a.record = &cs.path;
        a.record_until = t;
        const PathOut o = run_path(r, a);
        cs.attempts = i + 1;
        if (!o.hit) return cs;
    }
    throw ResourceError("sample_conditioned_path: no accepted path after " + std::to_string(max_attempts) +
                        " attempts (acceptance rate < " + std::to_string(1.0 / double(max_attempts)) + ")");
}

ConditionedEndpoints sample_conditioned_endpoints(const RngStream& rng, const Barrier& b, double t, double s,
                                                  std::uint64_t n_accept, const StepPolicy& policy, int workers,
                                                  std::uint64_t max_attempts) {
    if (!(s >= t) || !(t > 0.0)) throw std::invalid_argument("sample_conditioned_endpoints: need 0 < t <= s");
    const StepGrid g = make_step_grid(b, 0.0, s, {t}, policy);
    ConditionedEndpoints out;
    std::uint64_t next = 0;
    const std::uint64_t batch = 64 * kChunk;
    while (out.values.size() < n_accept) {
        if (next >= max_attempts)
            throw ResourceError("conditioned sampler: budget of " + std::to_string(max_attempts) + " attempts exhausted with " +
                                std::to_string(out.values.size()) + " accepted (rate " +
                                std::to_string(double(out.values.size()) / double(next)) + ")");
        const std::uint64_t lo = next;
        const std::uint64_t nch = batch / kChunk;
        auto parts = parallel_map(std::size_t(nch), workers, [&](std::size_t c) {
            std::vector<std::pair<std::uint64_t, double>> acc;
            for (std::uint64_t i = lo + c * kChunk; i < lo + (c + 1) * kChunk; ++i) {
                RngStream r = rng.split(i);
                double cp = 0.0;
                PathArgs a;
                a.grid = &g;
                a.x0 = 0.0;
                a.checkpoints_out = &cp;
                if (!run_path(r, a).hit) acc.emplace_back(i, cp);
            }
            return acc;
        });
        for (auto& p : parts)
            for (auto& [i, v] : p) {
                if (out.values.size() < n_accept) {
                    out.values.push_back(v);
                    out.attempts = i + 1;
                }
            }
        next = lo + batch;
        if (out.values.size() < n_accept) out.attempts = next;
    }
    return out;
}

UchiyamaReport uchiyama_diagnostic(const Barrier& b, double x, double t, double C) {
    if (!(t > 1.0)) throw std::invalid_argument("uchiyama_diagnostic: t must be > 1");
    UchiyamaReport r;
    auto f1 = [&](double u) { return b.eval(u) * std::pow(u, -1.5); };
    auto f2 = [&](double u) {
        const double p = b.eval(u);
        return p * p / (u * u);
    };
    // integrate over [1, t] piecewise on a geometric partition so long ranges stay accurate
    double lo = 1.0;
    while (lo < t) {
        const double hi = std::min(t, lo * 4.0);
        r.integral1 += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f1, lo, hi, 15, 1e-13);
        r.integral2 += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f2, lo, hi, 15, 1e-13);
        lo = hi;
    }
    const double pi = 3.14159265358979323846;
    r.bound_shape = (1.0 + std::abs(x)) / std::sqrt(t) * std::exp(std::sqrt(2.0 * pi) / 4.0 * r.integral1 + C * r.integral2);
    return r;
}

namespace {

MartingaleCheck martingale_means(const RngStream& rng, const Barrier& b, const RTable& table,
                                 const std::vector<double>& checkpoints, std::uint64_t n, const StepPolicy& policy,
                                 int workers, double slope) {
    if (n == 0) throw std::invalid_argument("martingale check: n must be >= 1");
    if (checkpoints.empty()) throw std::invalid_argument("martingale check: no checkpoints");
    std::vector<double> cps = checkpoints;
    std::sort(cps.begin(), cps.end());
    MartingaleCheck mc;
    mc.checkpoints = cps;
    const double R00 = table(0.0, 0.0);
    std::vector<double> positive;
    for (double c : cps)
        if (c > 0.0) positive.push_back(c);
    const std::size_t k = positive.size();
    std::vector<RunningStats> st(2 * k + 1);
    if (k > 0) {
        const StepGrid g = make_step_grid(b, slope, positive.back(), positive, policy);
        st = reduce_paths(n, workers, 2 * k + 1, [&](std::uint64_t i, std::vector<RunningStats>& acc) {
            RngStream r = rng.split(i);
            std::vector<double> cp(k);
            PathArgs a;
            a.grid = &g;
            a.x0 = 0.0;
            a.checkpoints_out = cp.data();
            run_path(r, a);
            for (std::size_t j = 0; j < k; ++j) {
                double v = 0.0;
                if (!std::isnan(cp[j])) {
                    const double tj = positive[j];
                    if (slope == 0.0) {
                        const auto lk = table.lookup(cp[j], tj);
                        v = lk.value;
                        acc[k + j].add(lk.fallback ? 1.0 : 0.0);
                    } else {
                        const auto lk = table.lookup(cp[j] - slope * tj, tj);
                        v = lk.value / R00 * std::exp(slope * cp[j] - tj);
                        acc[k + j].add(lk.fallback ? 1.0 : 0.0);
                    }
                }
                acc[j].add(v);
            }
        });
    }
    double lookups = 0.0, fallbacks = 0.0;
    std::size_t j = 0;
    for (double c : cps) {
        if (c == 0.0) {
            Estimate e;
            e.value = slope == 0.0 ? R00 : 1.0;
            e.n = n;
            e.method = "exact-initial";
            mc.means.push_back(e);
            continue;
        }
        mc.means.push_back(st[j].estimate("mc"));
        lookups += double(st[k + j].count());
        fallbacks += st[k + j].mean() * double(st[k + j].count());
        ++j;
    }
    mc.fallbacks = std::uint64_t(std::llround(fallbacks));
    mc.coverage = lookups > 0.0 ? 1.0 - fallbacks / lookups : 1.0;
    if (mc.coverage < 0.95)
        for (auto& e : mc.means) e.flags.push_back("low-table-coverage");
    return mc;
}

}  // namespace

MartingaleCheck verify_R_martingale(const RngStream& rng, const Barrier& b, const RTable& table,
                                    const std::vector<double>& checkpoints, std::uint64_t n, const StepPolicy& policy,
                                    int workers) {
    return martingale_means(rng, b, table, checkpoints, n, policy, workers, 0.0);
}

MartingaleCheck verify_drifted_change_of_measure(const RngStream& rng, const Barrier& b, const RTable& table,
                                                 const std::vector<double>& checkpoints, std::uint64_t n,
                                                 const StepPolicy& policy, int workers) {
    return martingale_means(rng, b, table, checkpoints, n, policy, workers, kSqrt2);
}

}  // namespace bbmlab
