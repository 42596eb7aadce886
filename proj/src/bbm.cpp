#include "bbmlab/bbm.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "bbmlab/errors.hpp"
#include "bbmlab/parallel.hpp"

namespace bbmlab {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
// 2 g0 g1 / h beyond which a bridge touch is ignored (e^{-40} ~ 4e-18).
constexpr double kFarExponent = 40.0;
constexpr double kTimeEps = 1e-12;

// Structure-of-arrays particle store for one replicate.
class Engine {
public:
    Engine(const EngineConfig& cfg, const RngStream& rng) : cfg_(cfg), rng_(rng), d_(cfg.d) {
        if (cfg.killing == KillingMode::directional) {
            dirs_ = cfg.grid->directions.data();
            K_ = std::size_t(cfg.grid->size());
            signature_ = overshoot_signature(*cfg.grid, *cfg.barrier);
        }
    }

    SimulationResult run(const Population& init) {
        load(init);
        const double t0 = init.time;
        std::vector<double> cps = cfg_.checkpoints.empty() ? std::vector<double>{cfg_.horizon} : cfg_.checkpoints;
        std::sort(cps.begin(), cps.end());
        for (double c : cps)
            if (c < t0 - kTimeEps || c > cfg_.horizon + kTimeEps)
                throw std::invalid_argument("simulate: checkpoint outside [start, horizon]");

        std::vector<double> times{t0};
        if (cfg_.uses_grid()) {
            for (long k = long(std::floor(t0 / cfg_.dt)) + 1;; ++k) {
                const double s = double(k) * cfg_.dt;
                if (s >= cfg_.horizon - kTimeEps) break;
                if (s > t0 + kTimeEps) times.push_back(s);
            }
        }
        for (double c : cps) times.push_back(c);
        times.push_back(cfg_.horizon);
        std::sort(times.begin(), times.end());
        // merge near-duplicates, keeping checkpoints exact
        std::vector<double> merged;
        for (double s : times) {
            if (!merged.empty() && s - merged.back() < 1e-9) {
                if (std::binary_search(cps.begin(), cps.end(), s)) merged.back() = s;
                continue;
            }
            merged.push_back(s);
        }
        merged.front() = t0;

        SimulationResult res;
        std::size_t next_cp = 0;
        grid_time_checks_all(t0);
        compact();
        while (next_cp < cps.size() && cps[next_cp] <= t0 + kTimeEps) res.snapshots.push_back(snapshot(cps[next_cp++]));
        for (std::size_t m = 1; m < merged.size(); ++m) {
            step(merged[m - 1], merged[m]);
            while (next_cp < cps.size() && std::abs(cps[next_cp] - merged[m]) < 1e-9)
                res.snapshots.push_back(snapshot(cps[next_cp++]));
        }
        res.max_radial_excess = max_excess_;
        res.waits = std::move(waits_);
        res.branchings = branchings_;
        return res;
    }

private:
    void load(const Population& init) {
        if (init.dim != d_ || init.positions.rows() != d_) throw std::invalid_argument("simulate: dimension mismatch");
        const std::size_t n = init.size();
        pos_.assign(init.positions.data(), init.positions.data() + n * std::size_t(d_));
        pos0_ = pos_;
        ids_ = init.ids;
        par_ = init.parent_ids;
        birth_ = init.birth_times;
        killed_ = init.killed_count;
        next_id_ = 0;
        for (auto id : ids_) next_id_ = std::max(next_id_, id + 1);
        next_.resize(n);
        tcur_.assign(n, init.time);
        for (std::size_t i = 0; i < n; ++i) next_[i] = init.time + draw_wait();
        dead_.assign(n, 0);
        if (K_ > 0) {
            os_.assign(n * K_, 0.0f);
            omin_.assign(n, 0.0f);
            if (init.has_overshoot()) {
                if (init.overshoot_signature != signature_ || std::size_t(init.overshoot.rows()) != K_)
                    throw std::invalid_argument("simulate: cached overshoots belong to another grid or barrier");
                std::memcpy(os_.data(), init.overshoot.data(), n * K_ * sizeof(float));
            } else {
                const double c = moving_level(*cfg_.barrier, init.time);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < K_; ++k) os_[i * K_ + k] = float(dot(k, &pos_[i * d_]) - c);
            }
            for (std::size_t i = 0; i < n; ++i) refresh_min(i);
        }
    }

    double draw_wait() {
        const double w = rng_.exponential();
        if (cfg_.record_waits) waits_.push_back(w);
        return w;
    }

    double dot(std::size_t k, const double* x) const {
        const double* th = dirs_ + k * std::size_t(d_);
        double s = 0.0;
        for (int c = 0; c < d_; ++c) s += th[c] * x[c];
        return s;
    }

    double norm(const double* x) const {
        double s = 0.0;
        for (int c = 0; c < d_; ++c) s += x[c] * x[c];
        return std::sqrt(s);
    }

    void refresh_min(std::size_t i) {
        const float* o = &os_[i * K_];
        omin_[i] = *std::min_element(o, o + K_);
    }

    void move(std::size_t i, double h) {
        if (h <= 0.0) return;
        const double sd = std::sqrt(h);
        double* x = &pos_[i * d_];
        for (int c = 0; c < d_; ++c) x[c] += sd * rng_.normal();
    }

    void spawn(std::size_t i, double tau) {
        if (ids_.size() + 1 > cfg_.population_cap) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "population cap %zu exceeded at time %.6g", cfg_.population_cap, tau);
            throw ResourceError(buf);
        }
        ++branchings_;
        for (int c = 0; c < d_; ++c) pos_.push_back(pos_[i * d_ + c]);
        for (int c = 0; c < d_; ++c) pos0_.push_back(pos0_[i * d_ + c]);
        if (K_ > 0) {
            for (std::size_t k = 0; k < K_; ++k) os_.push_back(os_[i * K_ + k]);
            omin_.push_back(omin_[i]);
        }
        ids_.push_back(next_id_++);
        par_.push_back(ids_[i]);
        birth_.push_back(tau);
        tcur_.push_back(tau);
        dead_.push_back(0);
        const double wc = draw_wait();
        next_.push_back(tau + wc);
        next_[i] = tau + draw_wait();
    }

    void step(double s0, double s1) {
        level0_ = level1_;
        set_levels(s1);
        const std::size_t n0 = ids_.size();
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (i < n0) {
                std::memcpy(&pos0_[i * d_], &pos_[i * d_], sizeof(double) * std::size_t(d_));
                tcur_[i] = s0;
            }
            while (next_[i] < s1) {
                const double tau = next_[i];
                move(i, tau - tcur_[i]);
                tcur_[i] = tau;
                spawn(i, tau);
            }
            move(i, s1 - tcur_[i]);
            tcur_[i] = s1;
            grid_time_checks(i, s1 - s0);
        }
        compact();
    }

    void set_levels(double s) {
        if (cfg_.barrier) level1_ = moving_level(*cfg_.barrier, s);
        if (cfg_.radial_monitor) monitor1_ = moving_level(*cfg_.radial_monitor, s);
    }

    void grid_time_checks_all(double t0) {
        set_levels(t0);
        for (std::size_t i = 0; i < ids_.size(); ++i) grid_time_checks(i, 0.0);
    }

    // h = 0 marks the start time: no bridge over a previous step.
    void grid_time_checks(std::size_t i, double h) {
        if (!cfg_.uses_grid()) return;
        const double* x1 = &pos_[i * d_];
        const double r1 = norm(x1);
        if (cfg_.radial_monitor) max_excess_ = std::max(max_excess_, r1 - monitor1_);
        if (cfg_.killing == KillingMode::radial) {
            if (r1 >= level1_ + cfg_.radial_C) dead_[i] = 1;
        } else if (cfg_.killing == KillingMode::directional) {
            float* o = &os_[i * K_];
            bool changed = false;
            if (r1 - level1_ > omin_[i]) {
                for (std::size_t k = 0; k < K_; ++k) {
                    const float v = float(dot(k, x1) - level1_);
                    if (v > o[k]) {
                        o[k] = v;
                        changed = true;
                    }
                }
            }
            if (cfg_.directional_bridge && h > 0.0) {
                const double* x0 = &pos0_[i * d_];
                const double G0 = level0_ - norm(x0), G1 = level1_ - r1;
                if (!(G0 > 0.0 && G1 > 0.0 && 2.0 * G0 * G1 / h > kFarExponent)) {
                    for (std::size_t k = 0; k < K_; ++k) {
                        if (o[k] > 0.0f) continue;
                        const double g0 = level0_ - dot(k, x0), g1 = level1_ - dot(k, x1);
                        if (g0 <= 0.0 || g1 <= 0.0) continue;
                        const double e = 2.0 * g0 * g1 / h;
                        if (e > kFarExponent) continue;
                        if (rng_.uniform() < std::exp(-e)) {
                            o[k] = FLT_MIN;
                            changed = true;
                        }
                    }
                }
            }
            if (changed) refresh_min(i);
            if (cfg_.remove_shaved && omin_[i] > 0.0f) dead_[i] = 1;
        }
    }

    void compact() {
        std::size_t w = 0;
        const std::size_t n = ids_.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (dead_[i]) {
                ++killed_;
                continue;
            }
            if (w != i) {
                std::memcpy(&pos_[w * d_], &pos_[i * d_], sizeof(double) * std::size_t(d_));
                std::memcpy(&pos0_[w * d_], &pos0_[i * d_], sizeof(double) * std::size_t(d_));
                if (K_ > 0) {
                    std::memcpy(&os_[w * K_], &os_[i * K_], sizeof(float) * K_);
                    omin_[w] = omin_[i];
                }
                ids_[w] = ids_[i];
                par_[w] = par_[i];
                birth_[w] = birth_[i];
                next_[w] = next_[i];
                tcur_[w] = tcur_[i];
                dead_[w] = 0;
            }
            ++w;
        }
        if (w == n) return;
        pos_.resize(w * d_);
        pos0_.resize(w * d_);
        if (K_ > 0) {
            os_.resize(w * K_);
            omin_.resize(w);
        }
        ids_.resize(w);
        par_.resize(w);
        birth_.resize(w);
        next_.resize(w);
        tcur_.resize(w);
        dead_.resize(w);
    }

    Population snapshot(double t) const {
        Population p;
        p.time = t;
        p.dim = d_;
        p.ids = ids_;
        p.parent_ids = par_;
        p.birth_times = birth_;
        const auto n = Eigen::Index(ids_.size());
        p.positions = Eigen::Map<const Eigen::MatrixXd>(pos_.data(), d_, n);
        if (K_ > 0) {
            p.overshoot = Eigen::Map<const Eigen::MatrixXf>(os_.data(), Eigen::Index(K_), n);
            p.overshoot_signature = signature_;
        }
        p.killed_count = killed_;
        return p;
    }

    const EngineConfig& cfg_;
    RngStream rng_;
    int d_;
    const double* dirs_ = nullptr;
    std::size_t K_ = 0;
    std::string signature_;

    std::vector<double> pos_, pos0_, birth_, next_, tcur_;
    std::vector<float> os_, omin_;
    std::vector<std::int64_t> ids_, par_;
    std::vector<char> dead_;
    std::int64_t next_id_ = 0;
    std::uint64_t killed_ = 0, branchings_ = 0;
    std::vector<double> waits_;
    double level0_ = 0.0, level1_ = 0.0, monitor1_ = 0.0;
    double max_excess_ = -std::numeric_limits<double>::infinity();
};

}  // namespace

void EngineConfig::validate() const {
    if (d < 1) throw std::invalid_argument("engine: d must be >= 1");
    if (!(horizon >= 0.0)) throw std::invalid_argument("engine: horizon must be >= 0");
    if (population_cap < 1) throw std::invalid_argument("engine: population_cap must be >= 1");
    if (uses_grid() && !(dt > 0.0)) throw std::invalid_argument("engine: dt must be > 0");
    if (killing != KillingMode::none && !barrier) throw std::invalid_argument("engine: killing needs a barrier");
    if (killing == KillingMode::directional) {
        if (!grid) throw std::invalid_argument("engine: directional killing needs a sphere grid");
        if (grid->dim != d) throw std::invalid_argument("engine: grid dimension differs from d");
    }
    if (start.size() != 0 && start.size() != d) throw std::invalid_argument("engine: start has the wrong dimension");
    for (double c : checkpoints)
        if (!(c >= 0.0) || c > horizon) throw std::invalid_argument("engine: checkpoints must lie in [0, horizon]");
}

std::string overshoot_signature(const SphereGrid& g, const Barrier& b) { return g.signature() + "|" + b.describe(); }

Population single_particle(int d, double t, const Eigen::VectorXd& x) {
    Population p;
    p.time = t;
    p.dim = d;
    p.ids = {0};
    p.parent_ids = {-1};
    p.birth_times = {t};
    p.positions = x.size() == 0 ? Eigen::MatrixXd::Zero(d, 1) : Eigen::MatrixXd(x);
    if (p.positions.rows() != d) throw std::invalid_argument("single_particle: dimension mismatch");
    return p;
}

SimulationResult simulate(const RngStream& rng, const EngineConfig& cfg) {
    cfg.validate();
    Engine e(cfg, rng);
    return e.run(single_particle(cfg.d, 0.0, cfg.start));
}

SimulationResult simulate_from(const RngStream& rng, const EngineConfig& cfg, const Population& init) {
    cfg.validate();
    if (init.time > cfg.horizon + kTimeEps) throw std::invalid_argument("simulate_from: start after the horizon");
    Engine e(cfg, rng);
    return e.run(init);
}

ConfinementResult radial_confinement_stats(const RngStream& rng, const EngineConfig& cfg,
                                           const std::vector<double>& C_levels, double horizon, std::uint64_t n,
                                           int workers) {
    EngineConfig c = cfg;
    c.killing = KillingMode::none;
    c.horizon = horizon;
    c.checkpoints = {horizon};
    c.radial_monitor = Barrier::log_plus(0.0, (c.d - 1) / (2.0 * kSqrt2));
    c.validate();
    ConfinementResult out;
    out.C_levels = C_levels;
    out.max_excess = parallel_map(std::size_t(n), workers, [&](std::size_t i) {
        return simulate(rng.split(i), c).max_radial_excess;
    });
    for (double C : C_levels) {
        RunningStats st;
        for (double m : out.max_excess) st.add(m >= C ? 1.0 : 0.0);
        Estimate e = st.estimate("radial-exceedance");
        // binomial standard error (identical to the sample one up to n / (n - 1))
        e.std_error = std::sqrt(std::max(e.value * (1.0 - e.value), 0.0) / double(std::max<std::uint64_t>(n, 1)));
        out.frequency.push_back(e);
    }
    return out;
}

void write_snapshot_csv(std::ostream& os, const std::vector<std::pair<std::uint64_t, Population>>& rows, bool header) {
    char buf[64];
    if (header && !rows.empty()) {
        os << "replicate,time,particle_id,parent_id,birth_time";
        for (int c = 0; c < rows.front().second.dim; ++c) os << ",x_" << (c + 1);
        os << "\n";
    }
    for (const auto& [rep, p] : rows) {
        for (std::size_t j = 0; j < p.size(); ++j) {
            os << rep;
            std::snprintf(buf, sizeof buf, ",%.17g", p.time);
            os << buf << "," << p.ids[j] << ",";
            if (p.parent_ids[j] >= 0) os << p.parent_ids[j];
            std::snprintf(buf, sizeof buf, ",%.17g", p.birth_times[j]);
            os << buf;
            for (int c = 0; c < p.dim; ++c) {
                std::snprintf(buf, sizeof buf, ",%.17g", p.positions(c, Eigen::Index(j)));
                os << buf;
            }
            os << "\n";
        }
    }
}

}  // namespace bbmlab
