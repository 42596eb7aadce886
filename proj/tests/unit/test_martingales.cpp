#include <doctest.h>

#include <cmath>
#include <memory>

#include "bbmlab/errors.hpp"
#include "bbmlab/martingales.hpp"
#include "bbmlab/parallel.hpp"
#include "bbmlab/spine.hpp"

using namespace bbmlab;

namespace {
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kPi = 3.14159265358979323846;

// R(x, t) = A - x is exact for a constant barrier and linear interpolation reproduces it.
RTable constant_table(double A) {
    std::vector<double> xs, ts{0, 1, 2, 4, 8, 16};
    for (double x = A; x >= -60; x -= 0.5) xs.push_back(x);
    Eigen::MatrixXd V(Eigen::Index(xs.size()), Eigen::Index(ts.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) V.row(Eigen::Index(i)).setConstant(A - xs[i]);
    return RTable(Barrier::constant(A), xs, ts, V, Eigen::MatrixXd::Zero(V.rows(), V.cols()));
}

EngineConfig shaving(int d, double A, double t, int K = 0) {
    EngineConfig cfg;
    cfg.d = d;
    cfg.horizon = t;
    cfg.killing = KillingMode::directional;
    cfg.barrier = Barrier::constant(A);
    cfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(d, K));
    cfg.dt = 0.05;
    return cfg;
}
}  // namespace

TEST_CASE("martingales at time zero and for a single particle") {
    const auto g = make_sphere_grid(2, 16);
    const Population p0 = single_particle(2);
    CHECK(additive_martingale(p0, g).isApproxToConstant(1.0));
    CHECK(derivative_martingale(p0, g).isZero());

    Population p = single_particle(1, 1.5, Eigen::VectorXd::Constant(1, 0.7));
    const auto g1 = make_sphere_grid(1);
    const double y = 0.7 - kSqrt2 * 1.5;
    CHECK(derivative_martingale(p, g1)[0] == doctest::Approx(-y * std::exp(kSqrt2 * y)));
    CHECK(additive_martingale(p, g1)[1] == doctest::Approx(std::exp(kSqrt2 * (-0.7 - kSqrt2 * 1.5))));
    Population empty;
    empty.positions.resize(1, 0);
    CHECK_THROWS_AS(additive_martingale(empty, g1), std::invalid_argument);
}

TEST_CASE("additive and derivative martingales have the right means") {
    EngineConfig cfg;
    cfg.d = 1;
    cfg.horizon = 2.0;
    const auto g = make_sphere_grid(1);
    const auto vals = parallel_map(10000, 1, [&](std::size_t i) {
        const auto p = simulate(RngStream(101, i), cfg).snapshots.back();
        return std::make_pair(additive_martingale(p, g)[0], derivative_martingale(p, g)[0]);
    });
    RunningStats W, Z;
    for (const auto& [w, z] : vals) {
        W.add(w);
        Z.add(z);
    }
    CHECK(agrees(W.estimate("W"), 1.0));
    CHECK(agrees(Z.estimate("Z"), 0.0));
}

TEST_CASE("shaved martingale with a constant barrier uses the closed form exactly") {
    const double A = 1.0;
    const auto cfg = shaving(2, A, 2.0, 16);
    const auto& g = *cfg.grid;
    const RTable table = constant_table(A);
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto p = simulate(RngStream(111, i), cfg).snapshots.back();
        const auto closed = shaved_martingale(p, g, *cfg.barrier, nullptr, ShavedWeight::exact);
        Eigen::VectorXd manual = Eigen::VectorXd::Zero(g.size());
        for (Eigen::Index j = 0; j < p.positions.cols(); ++j)
            for (Eigen::Index k = 0; k < g.size(); ++k) {
                if (p.overshoot(k, j) > 0.0f) continue;
                const double y = g.directions.col(k).dot(p.positions.col(j)) - kSqrt2 * p.time;
                manual[k] += (A - y) * std::exp(kSqrt2 * y);
            }
        CHECK((closed.values - manual).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + manual.cwiseAbs().maxCoeff()));
        CHECK((closed.values.array() >= 0.0).all());
        const auto tab = shaved_martingale(p, g, *cfg.barrier, &table, ShavedWeight::exact);
        CHECK((tab.values - manual).cwiseAbs().maxCoeff() <= 1e-9);
        // for a constant barrier the linear surrogate coincides with the exact weight
        const auto lin = shaved_martingale(p, g, *cfg.barrier, nullptr, ShavedWeight::linear);
        CHECK((lin.values - manual).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + manual.cwiseAbs().maxCoeff()));
    }
    const Population p0 = simulate(RngStream(1, 1), shaving(2, A, 0.0, 16)).snapshots.back();
    CHECK(shaved_martingale(p0, g, Barrier::constant(A), nullptr, ShavedWeight::exact).values.isApproxToConstant(A));
}

TEST_CASE("shaved martingale keeps its mean") {
    const double A = 1.0;
    const auto cfg = shaving(2, A, 3.0, 16);
    auto c2 = cfg;
    c2.checkpoints = {1.0, 3.0};
    const auto& g = *cfg.grid;
    const auto vals = parallel_map(6000, 1, [&](std::size_t i) {
        const auto r = simulate(RngStream(121, i), c2);
        std::array<Eigen::VectorXd, 2> out;
        for (int m = 0; m < 2; ++m)
            out[std::size_t(m)] = shaved_martingale(r.snapshots[std::size_t(m)], g, *cfg.barrier, nullptr,
                                                    ShavedWeight::exact).values;
        return out;
    });
    for (int m = 0; m < 2; ++m) {
        RunningStats integ, first;
        for (const auto& v : vals) {
            integ.add(sphere_integrate(v[std::size_t(m)], g));
            first.add(v[std::size_t(m)][0]);
        }
        CHECK(agrees(integ.estimate("int"), A * 2 * kPi));
        CHECK(agrees(first.estimate("dir0"), A));
    }
}

TEST_CASE("shaved martingale rejects overshoots from another grid or barrier") {
    const auto cfg = shaving(2, 1.0, 1.0, 16);
    const auto p = simulate(RngStream(131, 0), cfg).snapshots.back();
    CHECK_THROWS_AS(shaved_martingale(p, make_sphere_grid(2, 32), *cfg.barrier, nullptr, ShavedWeight::exact),
                    std::invalid_argument);
    CHECK_THROWS_AS(shaved_martingale(p, *cfg.grid, Barrier::constant(2.0), nullptr, ShavedWeight::exact),
                    std::invalid_argument);
    CHECK_THROWS_AS(shaved_martingale(p, *cfg.grid, Barrier::power(1, 1, 0.3), nullptr, ShavedWeight::exact),
                    std::invalid_argument);
    const RTable other = constant_table(2.0);
    CHECK_THROWS_AS(shaved_martingale(p, *cfg.grid, *cfg.barrier, &other, ShavedWeight::exact), std::invalid_argument);
}

TEST_CASE("direction density normalizes, clips and rejects degenerate input") {
    const auto g = make_sphere_grid(2, 8);
    const auto u = direction_density(Eigen::VectorXd::Constant(8, 3.0), g);
    for (Eigen::Index k = 0; k < 8; ++k) CHECK(u.mu[k] == doctest::Approx(g.weights[k] / sphere_area(2)));
    CHECK(u.clipped_fraction == 0.0);

    Eigen::VectorXd z = Eigen::VectorXd::Ones(8);
    z[3] = -0.5;
    const auto c = direction_density(z, g);
    CHECK(c.mu[3] == 0.0);
    CHECK(c.clipped[3]);
    CHECK(c.mu.sum() == doctest::Approx(1.0));
    CHECK(c.clipped_fraction == doctest::Approx(0.5 / 7.5));
    CHECK_THROWS_AS(direction_density(-Eigen::VectorXd::Ones(8), g), DegenerateError);

    std::vector<Eigen::VectorXd> series{Eigen::Vector2d(0, 5), Eigen::Vector2d(1, 1), Eigen::Vector2d(3, 2),
                                        Eigen::Vector2d(2, 2)};
    CHECK(trajectory_oscillation(series) == Eigen::Vector2d(2, 1));
}

TEST_CASE("spine sampler: rate-2 branching, conditioning and the theta0 law") {
    const double A = 1.0;
    const Barrier b = Barrier::constant(A);
    const RTable table = constant_table(A);
    const auto g = make_sphere_grid(2, 8);
    SpineConfig small;
    small.d = 2;
    small.horizon = 2.0;
    small.dt = 0.05;
    std::uint64_t branches = 0;
    std::vector<double> obs(8, 0.0);
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        const SpineTree tr = sample_spine_tree(RngStream(141, std::uint64_t(i)), small, b, g,
                                               Eigen::VectorXd::Ones(8), table);
        for (std::size_t m = 0; m < tr.grid_times.size(); ++m) CHECK(tr.spine_projection[m] < A);
        obs[std::size_t(tr.theta_index)] += 1;
        branches += tr.branch_times.size();
        CHECK(tr.population.size() >= tr.branch_times.size() + 1);
        CHECK(tr.population.ids[0] == tr.spine_id);
    }
    CHECK(chi_square_gof(obs, std::vector<double>(8, n / 8.0)).p_value > 0.01);
    const double mean_gap = 2.0 * n / double(branches);
    CHECK(std::abs(mean_gap - 0.5) < 3 * mean_gap / std::sqrt(double(branches)));
}

TEST_CASE("spine filter reproduces the Bessel-3 law for a constant barrier") {
    // Brownian motion h-transformed by A - y: A - y_t is a Bessel(3) process started at A.
    const double A = 1.0, t = 1.0;
    const Barrier b = Barrier::constant(A);
    const RTable table = constant_table(A);
    const auto g = make_sphere_grid(1);
    double mean = 0.0, norm = 0.0;
    for (double r = 1e-4; r < 12.0; r += 1e-3) {
        const auto phi = [&](double z) { return std::exp(-z * z / (2 * t)) / std::sqrt(2 * kPi * t); };
        const double dens = (r / A) * (phi(r - A) - phi(r + A));
        mean += r * dens * 1e-3;
        norm += dens * 1e-3;
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-4));
    SpineConfig sc;
    sc.d = 1;
    sc.horizon = t;
    sc.dt = 0.01;
    sc.theta0 = Eigen::VectorXd::Ones(1);
    RunningStats st;
    for (std::uint64_t i = 0; i < 3000; ++i) {
        const auto tr = sample_spine_tree(RngStream(151, i), sc, b, g, Eigen::VectorXd(), table);
        st.add(A - tr.spine_projection.back());
    }
    const Estimate e = st.estimate("bessel");
    // the K-candidate filter carries an O(1/K) bias; allow it on top of the noise
    CHECK(std::abs(e.value - mean) < 3 * e.std_error + 0.03);
}

TEST_CASE("change of measure: spine side matches the weighted plain side") {
    const double A = 1.0;
    const Barrier b = Barrier::constant(A);
    const RTable table = constant_table(A);
    const auto g = make_sphere_grid(1);
    ChangeOfMeasureConfig cc;
    cc.spine.dt = 0.02;
    cc.engine.dt = 0.05;
    cc.n_spine = 3000;
    cc.n_plain = 3000;
    const Eigen::VectorXd f = Eigen::VectorXd::Ones(2);

    const auto one = change_of_measure_check(RngStream(161, 0), cc, b, g, f, table, 2.0,
                                             [](const Population&) { return 1.0; });
    CHECK(one.spine_side.value == 1.0);
    CHECK(one.spine_side.std_error == 0.0);
    CHECK(agrees(one.plain_side, 1.0));

    const auto none = change_of_measure_check(RngStream(161, 1), cc, b, g, f, table, 2.0,
                                              [](const Population& p) { return p.size() <= 0 ? 1.0 : 0.0; });
    CHECK(none.spine_side.value == 0.0);
    CHECK(none.plain_side.value == 0.0);

    const auto med = change_of_measure_check(RngStream(161, 2), cc, b, g, f, table, 3.0,
                                             [](const Population& p) { return p.size() <= 14 ? 1.0 : 0.0; });
    CHECK(med.agree);
    CHECK(agrees(med.inter_branch, 0.5));
}
