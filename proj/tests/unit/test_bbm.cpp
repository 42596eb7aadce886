#include <doctest.h>

#include <cmath>
#include <map>
#include <memory>
#include <sstream>

#include "bbmlab/bbm.hpp"
#include "bbmlab/errors.hpp"
#include "bbmlab/parallel.hpp"

using namespace bbmlab;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSqrt2 = 1.4142135623730950488;

std::vector<double> final_counts(const RngStream& rng, const EngineConfig& cfg, std::size_t n) {
    return parallel_map(n, 1, [&](std::size_t i) { return double(simulate(rng.split(i), cfg).snapshots.back().size()); });
}

// P(max_{s<=t} (W_s - mu s) < a) for standard W.
double drifted_max_below(double a, double mu, double t) {
    const double st = std::sqrt(t);
    return normal_cdf((a + mu * t) / st) - std::exp(-2.0 * mu * a) * normal_cdf((-a + mu * t) / st);
}
}  // namespace

TEST_CASE("sphere grids carry unit directions and the sphere area") {
    for (int d : {1, 2, 3, 5}) {
        const auto g = make_sphere_grid(d, 0, 7);
        CHECK_NOTHROW(g.validate());
        CHECK(sphere_integrate(Eigen::VectorXd::Ones(g.size()), g) == doctest::Approx(sphere_area(d)).epsilon(1e-6));
    }
    CHECK(sphere_area(2) == doctest::Approx(2 * kPi));
    CHECK(sphere_area(3) == doctest::Approx(4 * kPi));
    CHECK(make_sphere_grid(1).size() == 2);
    CHECK(make_sphere_grid(2).size() == 64);
    CHECK(make_sphere_grid(3).size() == 256);

    const auto g2 = make_sphere_grid(2);
    const Eigen::VectorXd c = test_function(g2, TestFunction::first_harmonic);
    CHECK(sphere_integrate(c, g2, c) == doctest::Approx(kPi).epsilon(1e-12));
    CHECK(sphere_integrate(Eigen::VectorXd::Ones(64), g2, test_function(g2, TestFunction::hemisphere)) ==
          doctest::Approx(kPi));
    CHECK_THROWS_AS(sphere_integrate(Eigen::VectorXd::Ones(3), g2), std::invalid_argument);
    CHECK_THROWS_AS(make_sphere_grid(1, 4), std::invalid_argument);
    CHECK(make_sphere_grid(3, 512).signature() != make_sphere_grid(3).signature());
}

TEST_CASE("horizon zero returns the start particle") {
    EngineConfig cfg;
    cfg.d = 3;
    cfg.start = Eigen::Vector3d(1, -2, 0.5);
    const auto r = simulate(RngStream(1, 0), cfg);
    REQUIRE(r.snapshots.size() == 1);
    const auto& p = r.snapshots[0];
    CHECK(p.size() == 1);
    CHECK(p.positions.col(0).isApprox(cfg.start));
    CHECK(p.parent_ids[0] == -1);
}

TEST_CASE("population size follows the Yule law") {
    EngineConfig cfg;
    cfg.horizon = 1.0;
    const auto c1 = final_counts(RngStream(11, 0), cfg, 10000);
    const Estimate e1 = mean_estimate(c1);
    CHECK(agrees(e1, std::exp(1.0)));

    cfg.horizon = 6.0;
    const auto c6 = final_counts(RngStream(12, 0), cfg, 1000);
    CHECK(agrees(mean_estimate(c6), std::exp(6.0)));
    // geometric law P(N = k) = p (1 - p)^{k-1}, p = e^{-t}, binned so every expected count >= 5
    const double p = std::exp(-6.0);
    std::vector<double> edges;
    for (double e = 50; e < 2000; e += 50) edges.push_back(e);
    std::vector<double> obs(edges.size() + 1, 0.0), expct(edges.size() + 1, 0.0);
    auto cdf = [&](double k) { return 1.0 - std::pow(1.0 - p, k); };  // P(N <= k)
    for (double c : c6) {
        std::size_t b = std::size_t(std::upper_bound(edges.begin(), edges.end(), c - 1) - edges.begin());
        obs[b] += 1;
    }
    double prev = 0.0;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        const double cur = cdf(edges[b]);
        expct[b] = 1000.0 * (cur - prev);
        prev = cur;
    }
    expct.back() = 1000.0 * (1.0 - prev);
    CHECK(chi_square_gof(obs, expct).p_value > 0.01);
}

TEST_CASE("branch waits are exponential(1) and tree bookkeeping is consistent") {
    EngineConfig cfg;
    cfg.horizon = 4.0;
    cfg.record_waits = true;
    cfg.checkpoints = {2.0, 4.0};
    std::vector<double> waits;
    for (std::uint64_t i = 0; i < 40; ++i) {
        const auto r = simulate(RngStream(21, i), cfg);
        waits.insert(waits.end(), r.waits.begin(), r.waits.end());
        const auto& p = r.snapshots.back();
        CHECK(r.branchings + 1 == p.size());
        std::map<std::int64_t, double> birth;
        for (std::size_t j = 0; j < p.size(); ++j) {
            CHECK(p.birth_times[j] <= p.time);
            if (p.parent_ids[j] >= 0) CHECK(p.parent_ids[j] < p.ids[j]);
        }
    }
    CHECK(waits.size() >= 1000);
    CHECK(ks_test(waits, [](double x) { return 1.0 - std::exp(-x); }).p_value > 0.01);
}

TEST_CASE("directions are isotropic without killing") {
    EngineConfig cfg;
    cfg.d = 2;
    cfg.horizon = 4.0;
    const int bins = 16, n = 3000;
    std::vector<double> obs(bins, 0.0);
    for (int i = 0; i < n; ++i) {
        RngStream r(31, std::uint64_t(i));
        const auto p = simulate(r, cfg).snapshots.back();
        // one particle per replicate keeps the sample independent
        const std::size_t j = std::size_t(RngStream(32, std::uint64_t(i)).uniform() * double(p.size()));
        const double a = std::atan2(p.positions(1, Eigen::Index(j)), p.positions(0, Eigen::Index(j))) + kPi;
        obs[std::size_t(std::min(bins - 1, int(a / (2 * kPi) * bins)))] += 1;
    }
    CHECK(chi_square_gof(obs, std::vector<double>(bins, double(n) / bins)).p_value > 0.01);
}

TEST_CASE("population cap raises a resource error naming the time") {
    EngineConfig cfg;
    cfg.horizon = 20.0;
    cfg.population_cap = 50;
    try {
        simulate(RngStream(1, 1), cfg);
        FAIL("expected ResourceError");
    } catch (const ResourceError& e) {
        CHECK(std::string(e.what()).find("at time") != std::string::npos);
    }
    cfg.population_cap = 0;
    CHECK_THROWS_AS(simulate(RngStream(1, 1), cfg), std::invalid_argument);
}

TEST_CASE("identical seeds give identical snapshots") {
    EngineConfig cfg;
    cfg.d = 2;
    cfg.horizon = 3.0;
    cfg.checkpoints = {1.0, 3.0};
    cfg.killing = KillingMode::directional;
    cfg.barrier = Barrier::power(1, 1, 0.3);
    cfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(2, 16));
    cfg.dt = 0.05;
    const auto a = simulate(RngStream(5, 9), cfg), b = simulate(RngStream(5, 9), cfg);
    std::ostringstream sa, sb;
    std::vector<std::pair<std::uint64_t, Population>> ra, rb;
    for (const auto& p : a.snapshots) ra.emplace_back(0, p);
    for (const auto& p : b.snapshots) rb.emplace_back(0, p);
    write_snapshot_csv(sa, ra);
    write_snapshot_csv(sb, rb);
    CHECK(sa.str() == sb.str());
    CHECK(a.snapshots.back().overshoot == b.snapshots.back().overshoot);
}

TEST_CASE("radial killing removes particles beyond the moving level") {
    EngineConfig cfg;
    cfg.d = 2;
    cfg.horizon = 4.0;
    cfg.checkpoints = {1.0, 2.0, 4.0};
    cfg.killing = KillingMode::radial;
    cfg.barrier = Barrier::log_plus(0.5, 1.0 / (2 * kSqrt2));
    cfg.radial_C = 0.0;
    std::uint64_t killed = 0;
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto r = simulate(RngStream(41, i), cfg);
        for (const auto& p : r.snapshots)
            for (Eigen::Index j = 0; j < p.positions.cols(); ++j)
                CHECK(p.positions.col(j).norm() < moving_level(*cfg.barrier, p.time));
        killed += r.snapshots.back().killed_count;
    }
    CHECK(killed > 0);
}

TEST_CASE("directional overshoots are monotone along ancestry") {
    EngineConfig cfg;
    cfg.d = 2;
    cfg.horizon = 4.0;
    cfg.checkpoints = {2.0, 4.0};
    cfg.killing = KillingMode::directional;
    cfg.barrier = Barrier::constant(0.5);
    cfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(2, 32));
    cfg.dt = 0.02;
    for (std::uint64_t i = 0; i < 50; ++i) {
        const auto r = simulate(RngStream(51, i), cfg);
        const auto& s = r.snapshots[0];
        const auto& t = r.snapshots[1];
        std::map<std::int64_t, Eigen::Index> at_s;
        for (std::size_t j = 0; j < s.size(); ++j) at_s[s.ids[j]] = Eigen::Index(j);
        for (std::size_t j = 0; j < t.size(); ++j) {
            // same id: the particle itself; otherwise a child of a particle alive at s and born after s
            auto it = at_s.find(t.ids[j]);
            if (it == at_s.end() && t.birth_times[j] > s.time) it = at_s.find(t.parent_ids[j]);
            if (it == at_s.end()) continue;
            CHECK((t.overshoot.col(Eigen::Index(j)).array() >= s.overshoot.col(it->second).array()).all());
        }
    }
}

TEST_CASE("directional shaving matches the drifted reflection law") {
    // many-to-one: E #{j in N_t^{phi,theta}} = e^t P(max_s (W_s - sqrt2 s) < A)
    const double A = 1.0, t = 2.0;
    EngineConfig cfg;
    cfg.d = 1;
    cfg.horizon = t;
    cfg.killing = KillingMode::directional;
    cfg.barrier = Barrier::constant(A);
    cfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(1));
    cfg.dt = 0.05;
    const auto counts = parallel_map(20000, 1, [&](std::size_t i) {
        const auto p = simulate(RngStream(61, i), cfg).snapshots.back();
        return double((p.overshoot.row(0).array() <= 0.0f).count());
    });
    const double expected = std::exp(t) * drifted_max_below(A, kSqrt2, t);
    const Estimate e = mean_estimate(counts);
    CHECK(agrees(e, expected));

    // without the bridge correction the grid-only rule overcounts survivors
    cfg.directional_bridge = false;
    cfg.dt = 0.2;
    const auto coarse = parallel_map(5000, 1, [&](std::size_t i) {
        const auto p = simulate(RngStream(62, i), cfg).snapshots.back();
        return double((p.overshoot.row(0).array() <= 0.0f).count());
    });
    CHECK(mean_estimate(coarse).value > expected);
}

TEST_CASE("removing fully shaved particles keeps only per-direction survivors") {
    EngineConfig cfg;
    cfg.d = 1;
    cfg.horizon = 3.0;
    cfg.killing = KillingMode::directional;
    cfg.barrier = Barrier::constant(0.05);
    cfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(1));
    cfg.dt = 0.05;
    cfg.remove_shaved = true;
    std::uint64_t removed = 0;
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto p = simulate(RngStream(71, i), cfg).snapshots.back();
        CHECK((p.overshoot.array() <= 0.0f).colwise().any().count() == Eigen::Index(p.size()));
        removed += p.killed_count;
    }
    CHECK(removed > 0);
}

TEST_CASE("simulate_from continues a snapshot and checks overshoot signatures") {
    EngineConfig cfg;
    cfg.d = 1;
    cfg.horizon = 2.0;
    const auto first = simulate(RngStream(81, 0), cfg).snapshots.back();
    cfg.horizon = 5.0;
    const auto cont = simulate_from(RngStream(81, 1), cfg, first);
    CHECK(cont.snapshots.back().time == 5.0);
    CHECK(cont.snapshots.back().size() >= first.size());

    EngineConfig dcfg = cfg;
    dcfg.killing = KillingMode::directional;
    dcfg.barrier = Barrier::constant(1.0);
    dcfg.grid = std::make_shared<SphereGrid>(make_sphere_grid(1));
    dcfg.horizon = 2.0;
    auto tracked = simulate(RngStream(81, 2), dcfg).snapshots.back();
    EngineConfig other = dcfg;
    other.barrier = Barrier::constant(2.0);
    other.horizon = 3.0;
    CHECK_THROWS_AS(simulate_from(RngStream(81, 3), other, tracked), std::invalid_argument);
}

TEST_CASE("radial confinement frequencies decrease in C") {
    EngineConfig cfg;
    cfg.d = 2;
    cfg.dt = 0.02;
    const double inf = std::numeric_limits<double>::infinity();
    const auto r = radial_confinement_stats(RngStream(91, 0), cfg, {-inf, 0.0, 1.0, 2.0, 20.0}, 3.0, 300);
    CHECK(r.frequency[0].value == 1.0);
    CHECK(r.frequency[4].value == 0.0);
    for (std::size_t i = 1; i < r.frequency.size(); ++i) CHECK(r.frequency[i].value <= r.frequency[i - 1].value);
}

namespace {
// P(M_t <= x) for d = 1 from the F-KPP equation u_t = u_xx / 2 + u^2 - u, u(0, x) = 1{x >= 0},
// explicit finite differences on [-L, L]. Independent of the particle engine.
std::vector<double> kpp_max_cdf(double t, const std::vector<double>& xs) {
    const double L = 25.0, h = 0.02;
    const std::size_t m = std::size_t(2 * L / h) + 1;
    std::vector<double> u(m), nu(m);
    for (std::size_t i = 0; i < m; ++i) u[i] = -L + double(i) * h >= 0.0 ? 1.0 : 0.0;
    const std::size_t steps = std::size_t(std::ceil(t / (0.45 * h * h)));
    const double dt = t / double(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        nu.front() = 0.0;
        nu.back() = 1.0;
        for (std::size_t i = 1; i + 1 < m; ++i)
            nu[i] = u[i] + dt * (0.5 * (u[i + 1] - 2 * u[i] + u[i - 1]) / (h * h) + u[i] * u[i] - u[i]);
        std::swap(u, nu);
    }
    std::vector<double> out;
    for (double x : xs) {
        const double pos = (x + L) / h;
        const std::size_t i = std::size_t(pos);
        out.push_back(u[i] + (pos - double(i)) * (u[i + 1] - u[i]));
    }
    return out;
}
}  // namespace

TEST_CASE("law of the rightmost particle matches the F-KPP solution") {
    EngineConfig cfg;
    cfg.horizon = 3.0;
    const std::size_t n = 20000;
    const auto maxima = parallel_map(n, 1, [&](std::size_t i) {
        return simulate(RngStream(31, 0).split(i), cfg).snapshots.back().positions.maxCoeff();
    });
    const std::vector<double> xs{-1.0, 0.5, 1.5, 2.5, 3.5, 4.5, 5.5};
    const auto F = kpp_max_cdf(3.0, xs);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double emp = double(std::count_if(maxima.begin(), maxima.end(), [&](double m) { return m <= xs[k]; })) / double(n);
        const double se = std::sqrt(F[k] * (1 - F[k]) / double(n)) + 1e-3;  // 1e-3 covers the grid error
        CAPTURE(xs[k]);
        CHECK(std::abs(emp - F[k]) <= 4 * se);
    }
}
