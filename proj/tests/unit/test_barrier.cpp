#include <doctest.h>

#include <cmath>

#include "bbmlab/barrier.hpp"
#include "bbmlab/rng.hpp"

using namespace bbmlab;

TEST_CASE("barrier evaluation examples") {
    CHECK(Barrier::power(1, 1, 0.3).eval(0) == 1.0);
    CHECK(Barrier::power(1, 2, 0.25).eval(15) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(Barrier::log_plus(2, 0).eval(100) == 2.0);
    CHECK(Barrier::constant(5).deriv(3.0) == 0.0);
    CHECK(Barrier::power(1, 1, 0.3).deriv(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK_THROWS_AS(Barrier::power(1, 1, 0.3).eval(-1e-9), std::invalid_argument);
    CHECK_THROWS_AS(Barrier::power(1, 1, 0.3).deriv(-1.0), std::invalid_argument);
}

TEST_CASE("derivative matches centered finite differences") {
    const Barrier fams[] = {Barrier::constant(2), Barrier::power(1, 1, 0.3), Barrier::power(0.5, 3, 0.45),
                            Barrier::log_plus(1, 0.7)};
    for (const auto& b : fams) {
        for (double u : {0.1, 1.0, 10.0, 100.0}) {
            const double h = 1e-6;
            const double fd = (b.eval(u + h) - b.eval(u - h)) / (2 * h);
            const double d = b.deriv(u);
            if (d == 0.0)
                CHECK(std::abs(fd) < 1e-9);
            else
                CHECK(std::abs(fd - d) <= 1e-6 * std::abs(d));
            const double fd2 = (b.deriv(u + h) - b.deriv(u - h)) / (2 * h);
            CHECK(std::abs(fd2 - b.second_deriv(u)) <= 1e-5 * std::abs(b.second_deriv(u)) + 1e-12);
        }
    }
}

TEST_CASE("shift consistency is exact") {
    const Barrier b = Barrier::power(1, 1, 0.3);
    for (double t : {0.0, 0.5, 3.0, 100.0})
        for (double u : {0.0, 0.25, 7.0}) CHECK(b.shifted(t).eval(u) == b.eval(t + u));
    CHECK(b.shifted(2).shifted(3).eval(1) == b.eval(6));
}

TEST_CASE("monotone and concave on random triples") {
    RngStream r(2024, 0);
    const Barrier fams[] = {Barrier::power(1, 1, 0.3), Barrier::log_plus(1, 0.7), Barrier::power(2, 0.5, 0.1)};
    for (const auto& b : fams) {
        for (int k = 0; k < 1000; ++k) {
            double u[3] = {50 * r.uniform(), 50 * r.uniform(), 50 * r.uniform()};
            std::sort(u, u + 3);
            if (!(u[0] < u[1] && u[1] < u[2])) continue;
            const double w = (u[1] - u[0]) / (u[2] - u[0]);
            CHECK(b.eval(u[1]) >= (1 - w) * b.eval(u[0]) + w * b.eval(u[2]) - 1e-12);
            CHECK(b.eval(u[0]) <= b.eval(u[1]));
            CHECK(b.eval(u[1]) <= b.eval(u[2]));
        }
    }
}

TEST_CASE("hypothesis checks") {
    auto ok = check_hypothesis_H(Barrier::power(1, 1, 0.3));
    CHECK(ok.passes);
    REQUIRE(ok.alpha_witness);
    CHECK(*ok.alpha_witness == doctest::Approx(0.4));

    auto zero = check_hypothesis_H(Barrier::power(0, 1, 0.3));
    CHECK_FALSE(zero.passes);
    CHECK(zero.violations.size() == 1);

    auto steep = check_hypothesis_H(Barrier::power(1, 1, 0.6));
    CHECK_FALSE(steep.passes);
    CHECK_FALSE(steep.derivative_decay);

    auto cst = check_hypothesis_H(Barrier::constant(1));
    CHECK_FALSE(cst.passes);
    CHECK(cst.reference_only);

    auto lp = check_hypothesis_H(Barrier::log_plus(1, 0.5), 2);
    CHECK(lp.passes);
    REQUIRE(lp.gap_condition);
    CHECK(*lp.gap_condition);  // 0.5 > 1 / (2 sqrt 2)
    CHECK_FALSE(*check_hypothesis_H(Barrier::log_plus(1, 0.3), 2).gap_condition);
    CHECK(*check_hypothesis_H(Barrier::power(1, 1, 0.3), 3).gap_condition);
}

TEST_CASE("family names round trip") {
    for (auto f : {BarrierFamily::constant, BarrierFamily::power, BarrierFamily::log_plus})
        CHECK(barrier_family_from_string(to_string(f)) == f);
    CHECK_THROWS_AS(barrier_family_from_string("spline"), std::invalid_argument);
}
