#include "bbmlab/barrier.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bbmlab {

std::string to_string(BarrierFamily f) {
    switch (f) {
        case BarrierFamily::constant: return "constant";
        case BarrierFamily::power: return "power";
        case BarrierFamily::log_plus: return "log-plus";
    }
    return "?";
}

BarrierFamily barrier_family_from_string(const std::string& s) {
    if (s == "constant") return BarrierFamily::constant;
    if (s == "power") return BarrierFamily::power;
    if (s == "log-plus" || s == "log_plus") return BarrierFamily::log_plus;
    throw std::invalid_argument("unknown barrier family '" + s + "'");
}

static void require_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("barrier parameter ") + name + " must be finite");
}

Barrier Barrier::constant(double A) {
    require_finite(A, "A");
    return Barrier(BarrierFamily::constant, A, 0.0, 0.0, 0.0);
}

Barrier Barrier::power(double A, double a, double gamma) {
    require_finite(A, "A");
    require_finite(a, "a");
    require_finite(gamma, "gamma");
    if (a < 0.0) throw std::invalid_argument("power barrier: a must be >= 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("power barrier: gamma must be > 0");
    return Barrier(BarrierFamily::power, A, a, gamma, 0.0);
}

Barrier Barrier::log_plus(double A, double beta) {
    require_finite(A, "A");
    require_finite(beta, "beta");
    if (beta < 0.0) throw std::invalid_argument("log-plus barrier: beta must be >= 0");
    return Barrier(BarrierFamily::log_plus, A, 0.0, 0.0, beta);
}

void Barrier::check_u(double u) const {
    if (!(u >= 0.0)) throw std::invalid_argument("barrier evaluated at negative (or NaN) time");
}

double Barrier::eval(double u) const {
    check_u(u);
    const double v = 1.0 + shift_ + u;
    switch (family_) {
        case BarrierFamily::constant: return A_;
        case BarrierFamily::power: return A_ + a_ * std::expm1(gamma_ * std::log(v));
        case BarrierFamily::log_plus: return A_ + beta_ * std::log(v);
    }
    return A_;
}

double Barrier::deriv(double u) const {
    check_u(u);
    const double v = 1.0 + shift_ + u;
    switch (family_) {
        case BarrierFamily::constant: return 0.0;
        case BarrierFamily::power: return a_ * gamma_ * std::pow(v, gamma_ - 1.0);
        case BarrierFamily::log_plus: return beta_ / v;
    }
    return 0.0;
}

double Barrier::second_deriv(double u) const {
    check_u(u);
    const double v = 1.0 + shift_ + u;
    switch (family_) {
        case BarrierFamily::constant: return 0.0;
        case BarrierFamily::power: return a_ * gamma_ * (gamma_ - 1.0) * std::pow(v, gamma_ - 2.0);
        case BarrierFamily::log_plus: return -beta_ / (v * v);
    }
    return 0.0;
}

Barrier Barrier::shifted(double t) const {
    if (!(t >= 0.0)) throw std::invalid_argument("barrier shift must be >= 0");
    Barrier b = *this;
    b.shift_ += t;
    return b;
}

std::string Barrier::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(family_) << "(A=" << A_;
    if (family_ == BarrierFamily::power) os << ",a=" << a_ << ",gamma=" << gamma_;
    if (family_ == BarrierFamily::log_plus) os << ",beta=" << beta_;
    os << ",shift=" << shift_ << ")";
    return os.str();
}

HypothesisReport check_hypothesis_H(const Barrier& b, std::optional<int> d) {
    HypothesisReport r;
    const double phi0 = b.eval(0.0);
    if (!(phi0 > 0.0)) r.violations.push_back("phi(0) must be > 0, got " + std::to_string(phi0));

    switch (b.family()) {
        case BarrierFamily::constant:
            r.reference_only = true;
            r.derivative_decay = true;
            r.violations.push_back("constant barrier is not increasing (reference family only)");
            break;
        case BarrierFamily::power:
            if (!(b.a() > 0.0)) r.violations.push_back("power barrier needs a > 0 to be increasing");
            if (b.gamma() > 1.0) r.violations.push_back("power barrier with gamma > 1 is not concave");
            if (b.gamma() < 0.5) {
                r.alpha_witness = 0.5 * (b.gamma() + 0.5);
                r.derivative_decay = true;
            } else {
                r.violations.push_back("growth bound requires gamma < 1/2, got gamma = " +
                                       std::to_string(b.gamma()));
            }
            break;
        case BarrierFamily::log_plus:
            if (!(b.beta() > 0.0)) r.violations.push_back("log-plus barrier needs beta > 0 to be increasing");
            r.alpha_witness = 0.25;  // log grows slower than any power
            r.derivative_decay = true;
            break;
    }
    if (d) {
        if (*d < 1) throw std::invalid_argument("check_hypothesis_H: dimension must be >= 1");
        const double c = (*d - 1) / (2.0 * std::sqrt(2.0));
        switch (b.family()) {
            case BarrierFamily::constant: r.gap_condition = false; break;
            case BarrierFamily::power: r.gap_condition = b.a() > 0.0; break;
            case BarrierFamily::log_plus: r.gap_condition = b.beta() > c; break;
        }
    }
    r.passes = r.violations.empty();
    return r;
}

}  // namespace bbmlab
