#include "bbmlab/rtable.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bbmlab/parallel.hpp"

namespace bbmlab {

RTable::RTable(Barrier b, std::vector<double> x_grid, std::vector<double> t_grid, Eigen::MatrixXd values,
               Eigen::MatrixXd std_errors, RTableMeta meta)
    : barrier_(std::move(b)),
      x_grid_(std::move(x_grid)),
      t_grid_(std::move(t_grid)),
      values_(std::move(values)),
      std_errors_(std::move(std_errors)),
      meta_(std::move(meta)) {
    if (x_grid_.empty() || t_grid_.empty()) throw std::invalid_argument("RTable: empty grid");
    for (std::size_t i = 1; i < x_grid_.size(); ++i)
        if (!(x_grid_[i] < x_grid_[i - 1])) throw std::invalid_argument("RTable: x_grid must be strictly decreasing");
    for (std::size_t j = 1; j < t_grid_.size(); ++j)
        if (!(t_grid_[j] > t_grid_[j - 1])) throw std::invalid_argument("RTable: t_grid must be strictly increasing");
    if (t_grid_.front() < 0.0) throw std::invalid_argument("RTable: negative time");
    const auto nx = Eigen::Index(x_grid_.size()), nt = Eigen::Index(t_grid_.size());
    if (values_.rows() != nx || values_.cols() != nt || std_errors_.rows() != nx || std_errors_.cols() != nt)
        throw std::invalid_argument("RTable: matrix shape does not match grids");
    col_D_.resize(t_grid_.size());
    col_R_.resize(t_grid_.size());
    for (Eigen::Index j = 0; j < nt; ++j) {
        const double phi = barrier_.eval(t_grid_[std::size_t(j)]);
        col_D_[std::size_t(j)].push_back(0.0);
        col_R_[std::size_t(j)].push_back(0.0);
        for (Eigen::Index i = 0; i < nx; ++i) {
            const double D = phi - x_grid_[std::size_t(i)];
            if (D > 0.0) {
                col_D_[std::size_t(j)].push_back(D);
                col_R_[std::size_t(j)].push_back(values_(i, j));
            }
        }
    }
}

double RTable::column_value(Eigen::Index j, double D, bool& out_of_range) const {
    const auto& Ds = col_D_[std::size_t(j)];
    const auto& Rs = col_R_[std::size_t(j)];
    if (D > Ds.back()) {
        out_of_range = true;
        return 0.0;
    }
    const auto it = std::upper_bound(Ds.begin(), Ds.end(), D);
    if (it == Ds.end()) return Rs.back();
    const std::size_t k = std::size_t(it - Ds.begin());
    const double w = (D - Ds[k - 1]) / (Ds[k] - Ds[k - 1]);
    return Rs[k - 1] + w * (Rs[k] - Rs[k - 1]);
}

RTable::Lookup RTable::lookup(double x, double t) const {
    if (!(t >= 0.0)) throw std::invalid_argument("RTable::lookup: negative time");
    const double D = barrier_.eval(t) - x;
    if (D <= 0.0) return {0.0, false};
    if (t < t_grid_.front() || t > t_grid_.back()) return {D, true};
    auto it = std::upper_bound(t_grid_.begin(), t_grid_.end(), t);
    std::size_t j1 = std::size_t(it - t_grid_.begin());
    if (j1 == t_grid_.size()) j1 = t_grid_.size() - 1;
    const std::size_t j0 = j1 == 0 ? 0 : j1 - 1;
    bool oor = false;
    const double v0 = column_value(Eigen::Index(j0), D, oor);
    if (j0 == j1 || t == t_grid_[j0]) return oor ? Lookup{D, true} : Lookup{v0, false};
    const double v1 = column_value(Eigen::Index(j1), D, oor);
    if (oor) return {D, true};
    const double w = (t - t_grid_[j0]) / (t_grid_[j1] - t_grid_[j0]);
    return {v0 + w * (v1 - v0), false};
}

double RTable::fitted_upper_constant() const {
    double C = 0.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const double phi = barrier_.eval(t_grid_[std::size_t(j)]);
        for (Eigen::Index i = 0; i < values_.rows(); ++i) {
            const double D = phi - x_grid_[std::size_t(i)];
            if (D > 0.0) C = std::max(C, values_(i, j) / (1.0 + D));
        }
    }
    return C;
}

RTable::SandwichReport RTable::sandwich() const {
    SandwichReport r;
    r.fitted_C = fitted_upper_constant();
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const double phi = barrier_.eval(t_grid_[std::size_t(j)]);
        for (Eigen::Index i = 0; i < values_.rows(); ++i) {
            const double D = phi - x_grid_[std::size_t(i)];
            if (D <= 0.0) {
                if (values_(i, j) != 0.0) r.lower_ok = false;
                continue;
            }
            const double gap = values_(i, j) - D;
            const double se = std_errors_(i, j);
            const double z = se > 0.0 ? gap / se : (gap >= -1e-12 ? 0.0 : -INFINITY);
            r.worst_lower_z = std::min(r.worst_lower_z, z);
            if (gap < -3.0 * se - 1e-12) r.lower_ok = false;
        }
    }
    return r;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

void RTable::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# bbmlab rtable v1\n";
    os << "# barrier: family=" << to_string(barrier_.family()) << ",A=" << num(barrier_.A()) << ",a=" << num(barrier_.a())
       << ",gamma=" << num(barrier_.gamma()) << ",beta=" << num(barrier_.beta()) << ",shift=" << num(barrier_.shift())
       << "\n";
    os << "# method: " << meta_.method << "\n";
    os << "# dt: " << num(meta_.dt) << "\n";
    os << "# n: " << meta_.n << "\n";
    os << "# horizon: " << num(meta_.horizon) << "\n";
    if (!meta_.note.empty()) os << "# note: " << meta_.note << "\n";
    os << "kind,x";
    for (double t : t_grid_) os << "," << num(t);
    os << "\n";
    for (const char* kind : {"value", "stderr"}) {
        const Eigen::MatrixXd& m = std::string(kind) == "value" ? values_ : std_errors_;
        for (std::size_t i = 0; i < x_grid_.size(); ++i) {
            os << kind << "," << num(x_grid_[i]);
            for (Eigen::Index j = 0; j < m.cols(); ++j) os << "," << num(m(Eigen::Index(i), j));
            os << "\n";
        }
    }
}

RTable RTable::read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::map<std::string, std::string> header;
    std::vector<double> t_grid, x_grid;
    std::vector<std::vector<double>> vals, ses;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto colon = line.find(':');
            if (colon != std::string::npos) {
                std::string key = line.substr(2, colon - 2);
                std::string val = line.substr(colon + 1);
                if (!val.empty() && val[0] == ' ') val.erase(0, 1);
                header[key] = val;
            }
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() < 3) throw std::runtime_error("rtable csv: short row in " + path);
        if (cells[0] == "kind") {
            for (std::size_t k = 2; k < cells.size(); ++k) t_grid.push_back(std::stod(cells[k]));
            continue;
        }
        std::vector<double> row;
        for (std::size_t k = 2; k < cells.size(); ++k) row.push_back(std::stod(cells[k]));
        if (row.size() != t_grid.size()) throw std::runtime_error("rtable csv: ragged row in " + path);
        if (cells[0] == "value") {
            x_grid.push_back(std::stod(cells[1]));
            vals.push_back(row);
        } else if (cells[0] == "stderr") {
            ses.push_back(row);
        } else {
            throw std::runtime_error("rtable csv: unknown row kind '" + cells[0] + "'");
        }
    }
    if (!header.count("barrier")) throw std::runtime_error("rtable csv: missing barrier header in " + path);
    std::map<std::string, double> bp;
    std::string family;
    for (const auto& kv : split_csv(header["barrier"])) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "family") family = v;
        else bp[k] = std::stod(v);
    }
    Barrier b = Barrier::constant(bp["A"]);
    switch (barrier_family_from_string(family)) {
        case BarrierFamily::constant: break;
        case BarrierFamily::power: b = Barrier::power(bp["A"], bp["a"], bp["gamma"]); break;
        case BarrierFamily::log_plus: b = Barrier::log_plus(bp["A"], bp["beta"]); break;
    }
    if (bp["shift"] != 0.0) b = b.shifted(bp["shift"]);
    if (ses.size() != vals.size()) throw std::runtime_error("rtable csv: value and stderr blocks differ in " + path);
    Eigen::MatrixXd V(Eigen::Index(vals.size()), Eigen::Index(t_grid.size())), S(V.rows(), V.cols());
    for (std::size_t i = 0; i < vals.size(); ++i)
        for (std::size_t j = 0; j < t_grid.size(); ++j) {
            V(Eigen::Index(i), Eigen::Index(j)) = vals[i][j];
            S(Eigen::Index(i), Eigen::Index(j)) = ses[i][j];
        }
    RTableMeta meta;
    meta.method = header.count("method") ? header["method"] : "";
    meta.dt = header.count("dt") ? std::stod(header["dt"]) : 0.0;
    meta.n = header.count("n") ? std::stoull(header["n"]) : 0;
    meta.horizon = header.count("horizon") ? std::stod(header["horizon"]) : 0.0;
    meta.note = header.count("note") ? header["note"] : "";
    return RTable(b, x_grid, t_grid, V, S, meta);
}

RTable build_rtable(const RngStream& rng, const Barrier& b, const std::vector<double>& x_grid,
                    const std::vector<double>& t_grid, const REstimateConfig& cfg) {
    const std::size_t nx = x_grid.size(), nt = t_grid.size();
    REstimateConfig cell_cfg = cfg;
    cell_cfg.workers = 1;
    auto cells = parallel_map(nx * nt, cfg.workers, [&](std::size_t k) {
        const std::size_t i = k / nt, j = k % nt;
        return estimate_R(rng.split(k), b, x_grid[i], t_grid[j], cell_cfg).estimate;
    });
    Eigen::MatrixXd V(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nt));
    Eigen::MatrixXd S(V.rows(), V.cols());
    for (std::size_t k = 0; k < nx * nt; ++k) {
        V(Eigen::Index(k / nt), Eigen::Index(k % nt)) = cells[k].value;
        S(Eigen::Index(k / nt), Eigen::Index(k % nt)) = cells[k].std_error;
    }
    RTableMeta meta;
    meta.method = cfg.method == RMethod::novikov ? "novikov" : "survival";
    meta.dt = cfg.policy.dt;
    meta.n = cfg.n;
    meta.horizon = cfg.method == RMethod::novikov ? cfg.horizon : (cfg.s_ladder.empty() ? 0.0 : cfg.s_ladder.back());
    RTable table(b, x_grid, t_grid, V, S, meta);
    const auto sw = table.sandwich();
    if (!sw.lower_ok)
        throw std::runtime_error("build_rtable: lower bound R >= phi(t) - x violated by more than 3 standard errors (worst z = " +
                                 std::to_string(sw.worst_lower_z) + ")");
    return table;
}

}  // namespace bbmlab
