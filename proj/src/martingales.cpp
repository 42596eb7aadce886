#include "bbmlab/martingales.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bbmlab/errors.hpp"

namespace bbmlab {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr Eigen::Index kColumnChunk = 4096;
// Terms with sqrt2 y below this are dropped when the weight comes from a table (e^{-56} relative).
constexpr double kNegligibleY = -40.0;

void check_pop(const Population& pop, const SphereGrid& grid) {
    if (pop.dim != grid.dim) throw std::invalid_argument("martingale: population and grid dimensions differ");
}

// Calls fn(first_column, Y) with Y = Theta^T X - sqrt2 t for consecutive column chunks.
template <class Fn>
void for_each_projection(const Population& pop, const SphereGrid& grid, Fn&& fn) {
    const Eigen::Index n = pop.positions.cols();
    Eigen::MatrixXd Y;
    for (Eigen::Index c0 = 0; c0 < n; c0 += kColumnChunk) {
        const Eigen::Index m = std::min(kColumnChunk, n - c0);
        Y.noalias() = grid.directions.transpose() * pop.positions.middleCols(c0, m);
        Y.array() -= kSqrt2 * pop.time;
        fn(c0, Y);
    }
}

}  // namespace

Eigen::VectorXd additive_martingale(const Population& pop, const SphereGrid& grid) {
    check_pop(pop, grid);
    if (pop.empty()) throw std::invalid_argument("additive_martingale: empty population");
    Eigen::VectorXd W = Eigen::VectorXd::Zero(grid.size());
    for_each_projection(pop, grid, [&](Eigen::Index, const Eigen::MatrixXd& Y) {
        W += (kSqrt2 * Y.array()).exp().matrix().rowwise().sum();
    });
    return W;
}

Eigen::VectorXd derivative_martingale(const Population& pop, const SphereGrid& grid) {
    check_pop(pop, grid);
    if (pop.empty()) throw std::invalid_argument("derivative_martingale: empty population");
    Eigen::VectorXd Z = Eigen::VectorXd::Zero(grid.size());
    for_each_projection(pop, grid, [&](Eigen::Index, const Eigen::MatrixXd& Y) {
        Z += (-Y.array() * (kSqrt2 * Y.array()).exp()).matrix().rowwise().sum();
    });
    return Z;
}

ShavedValues shaved_martingale(const Population& pop, const SphereGrid& grid, const Barrier& b, const RTable* table,
                               ShavedWeight weight) {
    check_pop(pop, grid);
    if (pop.size() > 0 && (!pop.has_overshoot() || pop.overshoot.rows() != grid.size() ||
                           pop.overshoot_signature != overshoot_signature(grid, b)))
        throw std::invalid_argument("shaved_martingale: overshoots were not tracked for this grid and barrier");
    if (weight == ShavedWeight::exact && table && !(table->barrier() == b))
        throw std::invalid_argument("shaved_martingale: table belongs to another barrier");
    if (weight == ShavedWeight::exact && !table && b.family() != BarrierFamily::constant)
        throw std::invalid_argument("shaved_martingale: exact weights need an RTable for non-constant barriers");

    ShavedValues out;
    out.values = Eigen::VectorXd::Zero(grid.size());
    const double t = pop.time;
    const double phit = b.eval(t);
    for_each_projection(pop, grid, [&](Eigen::Index c0, const Eigen::MatrixXd& Y) {
        for (Eigen::Index j = 0; j < Y.cols(); ++j) {
            const float* o = pop.overshoot.col(c0 + j).data();
            for (Eigen::Index k = 0; k < Y.rows(); ++k) {
                if (o[k] > 0.0f) continue;
                const double y = Y(k, j);
                ++out.terms;
                double w;
                if (weight == ShavedWeight::linear) {
                    w = phit - y;
                } else if (!table) {
                    w = b.A() - y;
                } else {
                    if (kSqrt2 * y < kNegligibleY) continue;
                    const auto lk = table->lookup(y, t);
                    if (lk.fallback) ++out.fallbacks;
                    w = lk.value;
                }
                out.values[k] += w * std::exp(kSqrt2 * y);
            }
        }
    });
    return out;
}

MartingaleSnapshot martingale_snapshot(const Population& pop, const SphereGrid& grid, const std::optional<Barrier>& b,
                                       const RTable* table) {
    MartingaleSnapshot s;
    s.time = pop.time;
    if (!pop.empty()) {
        s.W = additive_martingale(pop, grid);
        s.Z = derivative_martingale(pop, grid);
    } else {
        s.W = s.Z = Eigen::VectorXd::Zero(grid.size());
    }
    if (b && (pop.has_overshoot() || pop.empty())) {
        const auto lin = shaved_martingale(pop, grid, *b, nullptr, ShavedWeight::linear);
        s.Z_phi_linear = lin.values;
        if (table || b->family() == BarrierFamily::constant) {
            const auto ex = shaved_martingale(pop, grid, *b, table, ShavedWeight::exact);
            s.Z_phi = ex.values;
            s.fallbacks = ex.fallbacks;
        }
    }
    return s;
}

DirectionDensity direction_density(const Eigen::VectorXd& Z, const SphereGrid& grid) {
    if (Z.size() != grid.size()) throw std::invalid_argument("direction_density: values do not match the grid");
    const double total = Z.dot(grid.weights);
    if (!(total > 0.0)) throw DegenerateError("direction_density: integral of Z is not positive");
    DirectionDensity d;
    const Eigen::VectorXd pos = Z.cwiseMax(0.0);
    const double pos_mass = pos.dot(grid.weights);
    d.mu = pos.cwiseProduct(grid.weights) / pos_mass;
    d.clipped.resize(std::size_t(Z.size()));
    for (Eigen::Index k = 0; k < Z.size(); ++k) d.clipped[std::size_t(k)] = Z[k] < 0.0;
    const double abs_mass = Z.cwiseAbs().dot(grid.weights);
    d.clipped_fraction = (abs_mass - pos_mass) / abs_mass;
    return d;
}

Eigen::VectorXd trajectory_oscillation(const std::vector<Eigen::VectorXd>& series, int window) {
    if (series.empty()) return {};
    const std::size_t w = std::min<std::size_t>(std::size_t(std::max(window, 1)), series.size());
    Eigen::VectorXd lo = series.back(), hi = series.back();
    for (std::size_t i = series.size() - w; i < series.size(); ++i) {
        lo = lo.cwiseMin(series[i]);
        hi = hi.cwiseMax(series[i]);
    }
    return hi - lo;
}

}  // namespace bbmlab
