#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbmlab {

enum class BarrierFamily { constant, power, log_plus };

std::string to_string(BarrierFamily f);
BarrierFamily barrier_family_from_string(const std::string& s);

/// Deterministic curve phi on [0, inf).
///   constant:  phi(u) = A
///   power:     phi(u) = A + a ((1+u)^gamma - 1)
///   log-plus:  phi(u) = A + beta log(1+u)
/// A shift t turns phi into u -> phi(t + u). Values are immutable.
class Barrier {
public:
    static Barrier constant(double A);
    static Barrier power(double A, double a, double gamma);
    static Barrier log_plus(double A, double beta);

    BarrierFamily family() const { return family_; }
    double A() const { return A_; }
    double a() const { return a_; }
    double gamma() const { return gamma_; }
    double beta() const { return beta_; }
    double shift() const { return shift_; }

    /// phi_shift(u). Throws std::invalid_argument for u < 0.
    double eval(double u) const;
    double deriv(double u) const;
    double second_deriv(double u) const;

    /// phi_{shift + t}
    Barrier shifted(double t) const;

    /// Stable one-line description, e.g. "power(A=1,a=1,gamma=0.3,shift=0)".
    std::string describe() const;

    bool operator==(const Barrier& o) const = default;

private:
    Barrier(BarrierFamily f, double A, double a, double gamma, double beta)
        : family_(f), A_(A), a_(a), gamma_(gamma), beta_(beta) {}
    void check_u(double u) const;

    BarrierFamily family_;
    double A_, a_, gamma_, beta_;
    double shift_ = 0.0;
};

struct HypothesisReport {
    bool passes = false;
    /// An alpha in (gamma, 1/2) witnessing polynomial growth, when one exists.
    std::optional<double> alpha_witness;
    /// Derivative decays like t^{-1/2-eps} for some eps > 0.
    bool derivative_decay = false;
    /// Constant barriers are admitted as a reference family only.
    bool reference_only = false;
    /// phi(t) - (d-1)/(2 sqrt 2) log(1+t) tends to infinity; filled when d is supplied.
    std::optional<bool> gap_condition;
    std::vector<std::string> violations;
};

/// Checks increasing, concave, C^1, phi(0) > 0 and the growth bound phi(t) <= C(1+t)^alpha, alpha < 1/2.
HypothesisReport check_hypothesis_H(const Barrier& b, std::optional<int> d = std::nullopt);

}  // namespace bbmlab
