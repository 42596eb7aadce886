#include "bbmlab/spine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "bbmlab/errors.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"

namespace bbmlab {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kFarExponent = 40.0;
// Sub-streams of one spine tree.
constexpr std::uint64_t kThetaStream = 0, kFilterStream = 1, kBranchStream = 2, kOrthStream = 3, kBridgeStream = 4;
constexpr std::uint64_t kChildStreamBase = 100;

std::vector<double> spine_grid(double horizon, double dt) {
    std::vector<double> g{0.0};
    for (long k = 1;; ++k) {
        const double s = double(k) * dt;
        if (s >= horizon - 1e-9) break;
        g.push_back(s);
    }
    if (horizon > 0.0) g.push_back(horizon);
    return g;
}

// Systematic resampling: K ancestor indices from weights w (not necessarily normalized).
void systematic(const std::vector<double>& w, double u, std::vector<int>& out) {
    const int K = int(w.size());
    double total = 0.0;
    for (double x : w) total += x;
    out.resize(std::size_t(K));
    double cum = w[0] / total;
    int j = 0;
    for (int k = 0; k < K; ++k) {
        const double p = (double(k) + u) / double(K);
        while (p > cum && j < K - 1) cum += w[std::size_t(++j)] / total;
        out[std::size_t(k)] = j;
    }
}

}  // namespace

void SpineConfig::validate() const {
    if (d < 1) throw std::invalid_argument("spine: d must be >= 1");
    if (!(horizon >= 0.0)) throw std::invalid_argument("spine: horizon must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("spine: dt must be > 0");
    if (candidates < 1) throw std::invalid_argument("spine: candidates must be >= 1");
    if (theta0 && (theta0->size() != d || !(theta0->norm() > 0.0)))
        throw std::invalid_argument("spine: theta0 must be a nonzero d-vector");
}

SpineTree sample_spine_tree(const RngStream& rng, const SpineConfig& cfg, const Barrier& b, const SphereGrid& grid,
                            const Eigen::VectorXd& f, const RTable& table) {
    cfg.validate();
    if (grid.dim != cfg.d) throw std::invalid_argument("spine: grid dimension differs from d");
    if (!(table.barrier() == b)) throw std::invalid_argument("spine: table belongs to another barrier");
    const int d = cfg.d;
    SpineTree tree;

    if (cfg.theta0) {
        tree.theta0 = cfg.theta0->normalized();
    } else {
        if (f.size() != grid.size()) throw std::invalid_argument("spine: f does not match the grid");
        if ((f.array() < 0.0).any()) throw std::invalid_argument("spine: f must be nonnegative");
        const Eigen::VectorXd mass = f.cwiseProduct(grid.weights);
        const double total = mass.sum();
        if (!(total > 0.0)) throw DegenerateError("spine: f has no mass on the grid");
        RngStream tr = rng.split(kThetaStream);
        const double u = tr.uniform() * total;
        double cum = 0.0;
        Eigen::Index k = 0;
        for (; k < mass.size() - 1; ++k) {
            cum += mass[k];
            if (u < cum) break;
        }
        tree.theta_index = k;
        tree.theta0 = grid.directions.col(k);
    }

    // Filter for the projected coordinate.
    const auto times = spine_grid(cfg.horizon, cfg.dt);
    const std::size_t M = times.size();
    const int K = cfg.candidates;
    std::vector<double> Y(M * std::size_t(K), 0.0);
    std::vector<int> parent(M * std::size_t(K), 0);
    std::vector<double> w(std::size_t(K), 1.0), rval(std::size_t(K), table(0.0, 0.0));
    std::vector<int> anc;
    RngStream fr = rng.split(kFilterStream);
    for (std::size_t m = 1; m < M; ++m) {
        const double s0 = times[m - 1], s1 = times[m], h = s1 - s0;
        const double phi0 = b.eval(s0), phi1 = b.eval(s1);
        systematic(w, fr.uniform(), anc);
        std::vector<double> rnew(static_cast<std::size_t>(K), 0.0);
        int alive = 0;
        for (int k = 0; k < K; ++k) {
            const int a = anc[std::size_t(k)];
            const double y0 = Y[(m - 1) * K + a];
            const double y1 = y0 + std::sqrt(h) * fr.normal();
            parent[m * K + k] = a;
            Y[m * K + k] = y1;
            double wk = 0.0;
            const double g0 = phi0 - y0, g1 = phi1 - y1;
            if (g1 > 0.0) {
                const double e = 2.0 * g0 * g1 / h;
                const bool crossed = e <= kFarExponent && fr.uniform() < std::exp(-e);
                if (!crossed) {
                    rnew[std::size_t(k)] = table(y1, s1);
                    wk = rnew[std::size_t(k)] / rval[std::size_t(a)];
                    ++alive;
                }
            }
            w[std::size_t(k)] = wk;
        }
        if (alive == 0) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "spine: all %d candidates died at time %.6g", K, s1);
            throw ResourceError(buf);
        }
        rval = std::move(rnew);
    }
    // final pick proportional to the last weights, then trace the ancestry back
    int k = 0;
    if (M > 1) {
        std::vector<int> pick;
        systematic(w, fr.uniform(), pick);
        k = pick[0];
    }
    tree.grid_times = times;
    tree.spine_projection.assign(M, 0.0);
    for (std::size_t m = M; m-- > 0;) {
        tree.spine_projection[m] = Y[m * K + std::size_t(k)];
        if (m > 0) k = parent[m * K + std::size_t(k)];
    }

    // Orthogonal Brownian part: a d-dimensional path with its theta0 component projected out.
    const Eigen::VectorXd& th = tree.theta0;
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(d, Eigen::Index(M));
    RngStream orr = rng.split(kOrthStream);
    if (d > 1)
        for (std::size_t m = 1; m < M; ++m) {
            const double sd = std::sqrt(times[m] - times[m - 1]);
            for (int c = 0; c < d; ++c) V(c, Eigen::Index(m)) = V(c, Eigen::Index(m - 1)) + sd * orr.normal();
        }
    auto position = [&](double y, double s, const Eigen::VectorXd& v) -> Eigen::VectorXd {
        Eigen::VectorXd perp = v - th * th.dot(v);
        return (y + kSqrt2 * s) * th + perp;
    };

    // Rate-2 branching along the spine.
    RngStream br = rng.split(kBranchStream);
    for (double tau = br.exponential() / 2.0; tau < cfg.horizon; tau += br.exponential() / 2.0)
        tree.branch_times.push_back(tau);

    EngineConfig ec;
    ec.d = d;
    ec.horizon = cfg.horizon;
    ec.population_cap = cfg.population_cap;

    Population& pop = tree.population;
    pop.time = cfg.horizon;
    pop.dim = d;
    const Eigen::VectorXd xi_end = position(tree.spine_projection.back(), cfg.horizon, V.col(Eigen::Index(M - 1)));
    std::vector<Eigen::VectorXd> cols{xi_end};
    pop.ids = {0};
    pop.parent_ids = {-1};
    pop.birth_times = {0.0};
    std::int64_t offset = 1;
    RngStream bb = rng.split(kBridgeStream);
    for (std::size_t c = 0; c < tree.branch_times.size(); ++c) {
        const double tau = tree.branch_times[c];
        std::size_t m = std::size_t(std::upper_bound(times.begin(), times.end(), tau) - times.begin()) - 1;
        if (m + 1 >= M) m = M - 2;
        const double s0 = times[m], s1 = times[m + 1], h = s1 - s0;
        const double a = (tau - s0) / h, sd = std::sqrt((tau - s0) * (s1 - tau) / h);
        const double y = (1 - a) * tree.spine_projection[m] + a * tree.spine_projection[m + 1] + sd * bb.normal();
        Eigen::VectorXd v = (1 - a) * V.col(Eigen::Index(m)) + a * V.col(Eigen::Index(m + 1));
        if (d > 1)
            for (int i = 0; i < d; ++i) v[i] += sd * bb.normal();
        const auto sub = simulate_from(rng.split(kChildStreamBase + c), ec, single_particle(d, tau, position(y, tau, v)));
        const Population& sp = sub.snapshots.back();
        if (pop.size() + sp.size() > cfg.population_cap) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "population cap %zu exceeded at time %.6g", cfg.population_cap, cfg.horizon);
            throw ResourceError(buf);
        }
        std::int64_t max_id = 0;
        for (std::size_t j = 0; j < sp.size(); ++j) {
            pop.ids.push_back(sp.ids[j] + offset);
            pop.parent_ids.push_back(sp.parent_ids[j] < 0 ? 0 : sp.parent_ids[j] + offset);
            pop.birth_times.push_back(sp.birth_times[j]);
            cols.push_back(sp.positions.col(Eigen::Index(j)));
            max_id = std::max(max_id, sp.ids[j]);
        }
        offset += max_id + 1;
    }
    pop.positions.resize(d, Eigen::Index(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) pop.positions.col(Eigen::Index(j)) = cols[j];
    return tree;
}

ChangeOfMeasureResult change_of_measure_check(const RngStream& rng, const ChangeOfMeasureConfig& cfg, const Barrier& b,
                                              const SphereGrid& grid, const Eigen::VectorXd& f, const RTable& table,
                                              double t, const PopulationFunctional& F) {
    if (f.size() != grid.size()) throw std::invalid_argument("change_of_measure_check: f does not match the grid");
    const Eigen::VectorXd fn = f / f.dot(grid.weights);
    ChangeOfMeasureResult out;
    out.R00 = table(0.0, 0.0);

    SpineConfig sc = cfg.spine;
    sc.horizon = t;
    sc.d = grid.dim;
    struct SpineOut {
        double F = 0.0;
        std::size_t branches = 0;
    };
    const RngStream spine_rng = rng.split(0), plain_rng = rng.split(1);
    const auto sres = parallel_map(std::size_t(cfg.n_spine), cfg.workers, [&](std::size_t i) {
        const SpineTree tr = sample_spine_tree(spine_rng.split(i), sc, b, grid, fn, table);
        return SpineOut{F(tr.population), tr.branch_times.size()};
    });
    RunningStats ss;
    std::uint64_t nb = 0;
    for (const auto& r : sres) {
        ss.add(r.F);
        nb += r.branches;
    }
    out.spine_side = ss.estimate("spine");
    const double exposure = t * double(cfg.n_spine);
    out.inter_branch.method = "spine-inter-branch";
    out.inter_branch.n = nb;
    if (nb > 0) {
        // Poisson MLE of the mean gap; delta-method standard error
        out.inter_branch.value = exposure / double(nb);
        out.inter_branch.std_error = out.inter_branch.value / std::sqrt(double(nb));
    }

    EngineConfig ec = cfg.engine;
    ec.d = grid.dim;
    ec.horizon = t;
    ec.checkpoints = {t};
    ec.killing = KillingMode::directional;
    ec.barrier = b;
    ec.grid = std::make_shared<const SphereGrid>(grid);
    ec.remove_shaved = false;
    struct PlainOut {
        double v = 0.0;
        std::uint64_t fallbacks = 0;
    };
    const auto pres = parallel_map(std::size_t(cfg.n_plain), cfg.workers, [&](std::size_t i) {
        const auto sim = simulate(plain_rng.split(i), ec);
        const Population& p = sim.snapshots.back();
        const auto z = shaved_martingale(p, grid, b, &table, ShavedWeight::exact);
        return PlainOut{F(p) * sphere_integrate(z.values, grid, fn) / out.R00, z.fallbacks};
    });
    RunningStats ps;
    for (const auto& r : pres) {
        ps.add(r.v);
        out.fallbacks += r.fallbacks;
    }
    out.plain_side = ps.estimate("plain");
    out.agree = agrees(out.spine_side, out.plain_side, 3.0);
    return out;
}

}  // namespace bbmlab
