#include <doctest.h>

#include <cmath>

#include "bbmlab/errors.hpp"
#include "bbmlab/extremes.hpp"

using namespace bbmlab;

namespace {
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kPi = 3.14159265358979323846;

std::vector<double> gumbel_draws(RngStream r, std::size_t n, double loc, double scale) {
    std::vector<double> v(n);
    for (auto& x : v) x = gumbel_quantile(r.uniform(), loc, scale);
    return v;
}
}  // namespace

TEST_CASE("centerings and the extreme record") {
    CHECK(centering_r(7.3, 4) == doctest::Approx(kSqrt2 * 7.3).epsilon(1e-15));
    CHECK(centering_m(1.0) == doctest::Approx(kSqrt2));
    CHECK(std::isnan(centering_m(0.0)));
    CHECK(centering_r_tilde(0.0, 3) == 0.0);

    const auto r0 = extreme_record(single_particle(1));
    CHECK(r0.R == 0.0);
    CHECK(r0.M_plus == 0.0);
    CHECK(r0.M_minus == 0.0);

    Population p = single_particle(2);
    p.ids = {5, 2, 9};
    p.parent_ids = {-1, 5, 5};
    p.birth_times = {0, 0, 0};
    p.positions.resize(2, 3);
    p.positions << 3, 0, -1,
                   4, 5, 0.5;
    const auto r = extreme_record(p);
    CHECK(r.R == 5.0);
    CHECK(r.argmax_id == 2);  // tie at norm 5 goes to the lower id
    CHECK(r.direction.isApprox(Eigen::Vector2d(0, 1)));
    CHECK(r.M_plus == 3.0);
    CHECK(r.M_minus == -1.0);
    Population single1 = single_particle(1, 2.0, Eigen::VectorXd::Constant(1, -3.0));
    CHECK(extreme_record(single1).R >= std::abs(extreme_record(single1).M_plus));
}

TEST_CASE("Gumbel maximum likelihood") {
    const double beta = 1.0 / kSqrt2;
    const auto xs = gumbel_draws(RngStream(201, 0), 100000, 0.0, beta);
    const auto f = gumbel_fit(xs);
    CHECK(std::abs(f.scale - beta) < 2.576 * f.scale_se);
    CHECK(std::abs(f.location) < 2.576 * f.location_se);

    std::vector<double> shifted = xs;
    for (auto& x : shifted) x += 3.25;
    const auto g = gumbel_fit(shifted);
    CHECK(g.location == doctest::Approx(f.location + 3.25).epsilon(1e-12));
    CHECK(g.scale == doctest::Approx(f.scale).epsilon(1e-12));

    RngStream r(202, 0);
    std::vector<double> ex(100000);
    for (auto& x : ex) x = r.exponential();
    CHECK(gumbel_fit(ex).ks_statistic > f.ks_statistic);

    CHECK_THROWS_AS(gumbel_fit(std::vector<double>(20, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_fit(std::vector<double>(50, 1.0)), DegenerateError);
}

TEST_CASE("Gumbel argmax formula") {
    CHECK(gumbel_argmax_prob(Eigen::Vector2d(0, 0)).isApprox(Eigen::Vector2d(0.5, 0.5)));
    CHECK(gumbel_argmax_prob(Eigen::Vector2d(std::log(2.0), 0)).isApprox(Eigen::Vector2d(2.0 / 3, 1.0 / 3)));
    const Eigen::Vector3d a(std::log(2.0), 0, -1);
    const Eigen::VectorXd p = gumbel_argmax_prob(a);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK((gumbel_argmax_prob((a.array() + 700.0).matrix()) - p).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::Vector3d ints(3, 0, -1);
    CHECK(gumbel_argmax_prob((ints.array() + 512.0).matrix()) == gumbel_argmax_prob(ints));
    RngStream r(211, 0);
    Eigen::Vector3d wins = Eigen::Vector3d::Zero();
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        Eigen::Index k;
        (a + Eigen::Vector3d(gumbel_quantile(r.uniform(), 0, 1), gumbel_quantile(r.uniform(), 0, 1),
                             gumbel_quantile(r.uniform(), 0, 1))).maxCoeff(&k);
        wins[k] += 1;
    }
    for (int k = 0; k < 3; ++k) {
        const double q = wins[k] / n;
        CHECK(std::abs(q - p[k]) < 3 * std::sqrt(p[k] * (1 - p[k]) / n));
    }
    CHECK_THROWS_AS(gumbel_argmax_prob(Eigen::Vector2d(0, INFINITY)), std::invalid_argument);
}

TEST_CASE("decorated Poisson point process") {
    const auto g = make_sphere_grid(2);
    const Eigen::VectorXd Z = Eigen::VectorXd::Ones(g.size());
    CHECK(ppp_expected_count(Z, g, 1.0, 0.0) == doctest::Approx(2 * kPi / kSqrt2));
    RngStream r(221, 0);
    RunningStats counts;
    for (int i = 0; i < 10000; ++i) counts.add(double(sample_decorated_ppp(r, Z, g, 1.0, 0.0).size()));
    CHECK(agrees(counts.estimate("count"), 2 * kPi / kSqrt2));

    std::size_t far = 0;
    for (int i = 0; i < 1000; ++i) far += sample_decorated_ppp(r, Z, g, 1.0, 30.0).size();
    CHECK(far == 0);

    const auto two = [](RngStream&) { return std::vector<double>{0.0, -1.0}; };
    const auto atoms = sample_decorated_ppp(r, Z, g, 1.0, -2.0, two);
    CHECK(atoms.size() % 2 == 0);
    for (std::size_t i = 0; i + 1 < atoms.size(); i += 2) {
        CHECK(atoms[i].cluster == atoms[i + 1].cluster);
        CHECK(atoms[i].is_root);
        CHECK(atoms[i].x == doctest::Approx(atoms[i + 1].x + 1.0));
        CHECK(atoms[i].x > -2.0);
    }
    CHECK_THROWS_AS(sample_decorated_ppp(r, -Z, g, 1.0, 0.0), DegenerateError);
    const auto bad = [](RngStream&) { return std::vector<double>{0.5}; };
    CHECK_THROWS_AS(sample_decorated_ppp(r, Z, g, 1.0, -5.0, bad), std::invalid_argument);
}

TEST_CASE("tail shape and IQR trend helpers") {
    // P(X > x) = (1 + sqrt2 x) e^{-sqrt2 x}: a sum of two exponentials of rate sqrt2
    RngStream r(231, 0);
    std::vector<double> xs(200000);
    for (auto& x : xs) x = (r.exponential() + r.exponential()) / kSqrt2;
    const auto fit = tail_shape_fit(xs);
    CHECK(-fit.slope > 1.1);
    CHECK(-fit.slope < 1.8);

    std::vector<std::vector<double>> flat(3), growing(3);
    for (int m = 0; m < 3; ++m)
        for (int i = 0; i < 1000; ++i) {
            const double z = r.normal();
            flat[std::size_t(m)].push_back(z);
            growing[std::size_t(m)].push_back(z * (1.0 + 0.5 * m));
        }
    CHECK(iqr_trend_test(flat, {8, 10, 12}, RngStream(232, 0), 300).p_value > 0.05);
    CHECK(iqr_trend_test(growing, {8, 10, 12}, RngStream(232, 0), 300).p_value < 0.01);
}

TEST_CASE("joint extremes experiment produces aligned records") {
    JointExtremesConfig cfg;
    cfg.s = 1.0;
    cfg.t = 4.0;
    cfg.n_outer = 4;
    cfg.n_inner = 40;
    const auto res = joint_extremes_experiment(RngStream(241, 0), cfg);
    REQUIRE(res.outer.size() == 4);
    for (const auto& o : res.outer) {
        CHECK(o.plus_margin.size() == 40);
        CHECK(o.fit_plus.has_value());
        CHECK(o.win_frequency >= 0.0);
        CHECK(o.win_frequency <= 1.0);
    }
    const auto again = joint_extremes_experiment(RngStream(241, 0), cfg);
    CHECK(again.outer[2].minus_margin == res.outer[2].minus_margin);
    cfg.t = 0.5;
    CHECK_THROWS_AS(joint_extremes_experiment(RngStream(241, 0), cfg), std::invalid_argument);
}
