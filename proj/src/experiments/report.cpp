#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bbmlab/extremes.hpp"
#include "context.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bbmlab {

namespace {

using detail::fmt;

struct Table {
    std::map<std::string, std::vector<double>> cols;
    std::size_t rows = 0;
    bool has(const std::string& c) const { return cols.count(c) > 0; }
    const std::vector<double>& col(const std::string& c) const { return cols.at(c); }
};

std::optional<Table> read_table(const fs::path& p) {
    std::ifstream is(p);
    if (!is) return std::nullopt;
    std::string line;
    std::vector<std::string> hdr;
    Table t;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (hdr.empty()) {
            hdr = cells;
            continue;
        }
        for (std::size_t i = 0; i < hdr.size(); ++i) {
            char* end = nullptr;
            const double v = i < cells.size() ? std::strtod(cells[i].c_str(), &end) : NAN;
            t.cols[hdr[i]].push_back(i < cells.size() && end != cells[i].c_str() ? v : NAN);
        }
        ++t.rows;
    }
    if (hdr.empty()) return std::nullopt;
    return t;
}

std::string esc(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '<') out += "&lt;";
        else if (ch == '>') out += "&gt;";
        else if (ch == '&') out += "&amp;";
        else out += ch;
    }
    return out;
}

/// Minimal scatter/line plot in SVG with linear axes.
class SvgPlot {
public:
    SvgPlot(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xl_(std::move(xlabel)), yl_(std::move(ylabel)) {}

    void points(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                const std::vector<double>& err = {}) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
            const double e = i < err.size() && std::isfinite(err[i]) ? err[i] : 0.0;
            pts_.push_back({x[i], y[i], e, color});
            extend(x[i], y[i] - e);
            extend(x[i], y[i] + e);
        }
    }
    void line(const std::vector<double>& x, const std::vector<double>& y, const std::string& color, const std::string& label) {
        std::vector<std::pair<double, double>> l;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::isfinite(x[i]) && std::isfinite(y[i])) {
                l.emplace_back(x[i], y[i]);
                extend(x[i], y[i]);
            }
        lines_.push_back({l, color, label});
    }

    void write(const fs::path& p) const {
        const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
        double x0 = xmin_, x1 = xmax_, y0 = ymin_, y1 = ymax_;
        if (!(x1 > x0)) { x0 -= 1; x1 += 1; }
        if (!(y1 > y0)) { y0 -= 1; y1 += 1; }
        const double px = (x1 - x0) * 0.04, py = (y1 - y0) * 0.06;
        x0 -= px; x1 += px; y0 -= py; y1 += py;
        auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
        auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
        std::ofstream os(p);
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
           << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title_) << "</text>\n";
        os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
           << "\" fill=\"none\" stroke=\"#444\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
            os << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
            os << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
        }
        os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << esc(xl_) << "</text>\n";
        os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
           << (T + H - B) / 2 << ")\">" << esc(yl_) << "</text>\n";
        int legend = 0;
        for (const auto& l : lines_) {
            if (l.pts.size() >= 2) {
                os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1.5\" points=\"";
                for (const auto& [x, y] : l.pts) os << sx(x) << ',' << sy(y) << ' ';
                os << "\"/>\n";
            }
            if (!l.label.empty()) {
                const double ly = T + 16 + 16 * legend++;
                os << "<line x1=\"" << L + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + 30 << "\" y2=\"" << ly - 4
                   << "\" stroke=\"" << l.color << "\" stroke-width=\"2\"/><text x=\"" << L + 36 << "\" y=\"" << ly << "\">"
                   << esc(l.label) << "</text>\n";
            }
        }
        for (const auto& q : pts_) {
            if (q.err > 0)
                os << "<line x1=\"" << sx(q.x) << "\" y1=\"" << sy(q.y - q.err) << "\" x2=\"" << sx(q.x) << "\" y2=\""
                   << sy(q.y + q.err) << "\" stroke=\"" << q.color << "\"/>\n";
            os << "<circle cx=\"" << sx(q.x) << "\" cy=\"" << sy(q.y) << "\" r=\"2.5\" fill=\"" << q.color << "\"/>\n";
        }
        os << "</svg>\n";
    }

private:
    static std::string tick(double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.3g", v);
        return b;
    }
    void extend(double x, double y) {
        xmin_ = std::min(xmin_, x);
        xmax_ = std::max(xmax_, x);
        ymin_ = std::min(ymin_, y);
        ymax_ = std::max(ymax_, y);
    }
    struct Pt {
        double x, y, err;
        std::string color;
    };
    struct Line {
        std::vector<std::pair<double, double>> pts;
        std::string color, label;
    };
    std::string title_, xl_, yl_;
    std::vector<Pt> pts_;
    std::vector<Line> lines_;
    double xmin_ = INFINITY, xmax_ = -INFINITY, ymin_ = INFINITY, ymax_ = -INFINITY;
};

struct Run {
    fs::path dir;
    json manifest;
    json summary;
};

void plot_sandwich(const Run& r, const fs::path& out, ReportResult& rep) {
    const auto t = read_table(r.dir / "sandwich_cells.csv");
    if (!t || !t->has("distance")) return;
    std::vector<double> D, R, se;
    for (std::size_t i = 0; i < t->rows; ++i)
        if (t->col("distance")[i] > 0) {
            D.push_back(t->col("distance")[i]);
            R.push_back(t->col("R")[i]);
            se.push_back(t->col("stderr")[i]);
        }
    if (D.empty()) return;
    const double C = r.summary.value("/results/sandwich/fitted_C"_json_pointer, 1.0);
    const double ratio = r.manifest.value("/config/acceptance/upper_ratio"_json_pointer, 1.15);
    const double dmax = *std::max_element(D.begin(), D.end());
    SvgPlot p("R estimate vs sandwich bounds", "phi(t) - x", "R");
    p.line({0, dmax}, {0, dmax}, "#1f77b4", "lower bound phi(t) - x");
    p.line({0, dmax}, {C, C * (1 + dmax)}, "#d62728", "fitted C (1 + phi(t) - x), C = " + fmt(C));
    p.line({0, dmax}, {0, ratio * dmax}, "#2ca02c", "ratio band " + fmt(ratio));
    p.points(D, R, "#000", se);
    const std::string name = "sandwich_" + r.dir.filename().string() + ".svg";
    p.write(out / name);
    rep.plots.push_back(name);
}

void plot_martingale(const Run& r, const fs::path& out, ReportResult& rep) {
    const auto t = read_table(r.dir / "martingale_integrated.csv");
    if (!t || !t->has("mean")) return;
    SvgPlot p("Integrated shaved martingale mean vs t", "t", "mean <Z^phi_t, f> / target");
    std::map<double, std::vector<std::size_t>> by_d;
    for (std::size_t i = 0; i < t->rows; ++i) by_d[t->col("d")[i]].push_back(i);
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    int c = 0;
    double tmin = INFINITY, tmax = -INFINITY;
    for (const auto& [d, idx] : by_d) {
        std::vector<double> x, y, e;
        for (std::size_t i : idx) {
            const double target = t->col("target")[i];
            x.push_back(t->col("time")[i] + 0.05 * c);
            y.push_back(t->col("mean")[i] / target);
            e.push_back(t->col("stderr")[i] / target);
            tmin = std::min(tmin, t->col("time")[i]);
            tmax = std::max(tmax, t->col("time")[i]);
        }
        p.line(x, y, colors[c % 4], "d = " + fmt(d));
        p.points(x, y, colors[c % 4], e);
        ++c;
    }
    p.line({tmin, tmax}, {1.0, 1.0}, "#888", "R(0,0) sigma");
    const std::string name = "martingale_" + r.dir.filename().string() + ".svg";
    p.write(out / name);
    rep.plots.push_back(name);
}

void plot_gumbel_qq(const Run& r, const fs::path& out, ReportResult& rep) {
    const auto m = read_table(r.dir / "joint_margins.csv");
    const auto o = read_table(r.dir / "outer_trees.csv");
    if (!m || !o || !m->has("plus_margin")) return;
    const json fit = r.summary.value("/results/joint/corrected_plus"_json_pointer, json());
    if (!fit.is_object()) return;
    std::vector<double> xs;
    for (std::size_t i = 0; i < m->rows; ++i) {
        const std::size_t k = std::size_t(m->col("outer")[i]);
        const double zp = o->col("Z_plus")[k], zm = o->col("Z_minus")[k];
        if (!(zp > 0 && zm > 0)) continue;
        xs.push_back(m->col("plus_margin")[i] - std::sqrt(2.0) / 2 * std::log(zp));
    }
    if (xs.size() < 2) return;
    std::sort(xs.begin(), xs.end());
    const double loc = fit.value("location", 0.0), sc = fit.value("scale", 1.0);
    std::vector<double> q(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) q[i] = gumbel_quantile((double(i) + 0.5) / double(xs.size()), loc, sc);
    SvgPlot p("Gumbel QQ, Z-corrected M+ margin (scale " + fmt(sc) + ")", "fitted Gumbel quantile", "empirical quantile");
    p.line({q.front(), q.back()}, {q.front(), q.back()}, "#888", "y = x");
    p.points(q, xs, "#1f77b4");
    const std::string name = "gumbel_qq_" + r.dir.filename().string() + ".svg";
    p.write(out / name);
    rep.plots.push_back(name);
}

void plot_confinement(const Run& r, const fs::path& out, ReportResult& rep) {
    const auto t = read_table(r.dir / "confinement.csv");
    if (!t || !t->has("frequency")) return;
    std::vector<double> C, lf;
    for (std::size_t i = 0; i < t->rows; ++i)
        if (t->col("frequency")[i] > 0) {
            C.push_back(t->col("C")[i]);
            lf.push_back(std::log(t->col("frequency")[i]));
        }
    if (C.empty()) return;
    SvgPlot p("Radial confinement", "C", "log exceedance frequency");
    p.points(C, lf, "#1f77b4");
    const double slope = r.summary.value("/results/confinement/slope"_json_pointer, NAN);
    if (std::isfinite(slope)) {
        const double a = lf.front() - slope * C.front();
        p.line({C.front(), C.back()}, {a + slope * C.front(), a + slope * C.back()}, "#d62728", "Poisson fit, slope " + fmt(slope));
        p.line({C.front(), C.back()}, {lf.front(), lf.front() - std::sqrt(2.0) * (C.back() - C.front())}, "#888",
               "slope -sqrt2");
    }
    const std::string name = "confinement_" + r.dir.filename().string() + ".svg";
    p.write(out / name);
    rep.plots.push_back(name);
}

std::string heat(double v) {  // v in [0, 2] around 1 = uniform
    const double u = std::clamp((v - 0.5) / 1.0, 0.0, 1.0);
    char b[16];
    std::snprintf(b, sizeof b, "#%02x%02x%02x", int(255 * u), int(80 + 60 * (1 - std::abs(2 * u - 1))), int(255 * (1 - u)));
    return b;
}

void plot_mu_hat(const Run& r, const fs::path& out, ReportResult& rep) {
    const auto t = read_table(r.dir / "direction_density.csv");
    if (!t || !t->has("mu_hat") || !t->has("theta_2")) return;
    const bool d3 = t->has("theta_3");
    const std::string name = "mu_hat_" + r.dir.filename().string() + ".svg";
    std::ofstream os(out / name);
    const double W = 640, H = d3 ? 360 : 420;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">ensemble mean mu-hat / uniform"
       << (d3 ? " (longitude vs latitude)" : " (by angle)") << "</text>\n";
    for (std::size_t i = 0; i < t->rows; ++i) {
        const double v = t->col("mu_hat")[i] / t->col("uniform")[i];
        const double x1 = t->col("theta_1")[i], x2 = t->col("theta_2")[i];
        if (d3) {
            const double lon = std::atan2(x2, x1), lat = std::asin(std::clamp(t->col("theta_3")[i], -1.0, 1.0));
            os << "<circle cx=\"" << 40 + (lon + M_PI) / (2 * M_PI) * (W - 80) << "\" cy=\"" << 40 + (M_PI / 2 - lat) / M_PI * (H - 80)
               << "\" r=\"6\" fill=\"" << heat(v) << "\"/>\n";
        } else {
            const double a = std::atan2(x2, x1), cx = W / 2, cy = H / 2 + 15, r0 = 90, r1 = 170;
            const double da = M_PI / double(t->rows);
            auto pt = [&](double rad, double ang) {
                return fmt(cx + rad * std::cos(ang)) + "," + fmt(cy - rad * std::sin(ang));
            };
            os << "<polygon fill=\"" << heat(v) << "\" points=\"" << pt(r0, a - da) << " " << pt(r1, a - da) << " "
               << pt(r1, a + da) << " " << pt(r0, a + da) << "\"/>\n";
        }
    }
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">blue: 0.5x uniform, red: 1.5x uniform</text>\n";
    os << "</svg>\n";
    rep.plots.push_back(name);
}

}  // namespace

ReportResult build_report(const std::vector<std::string>& dirs, const std::string& out_dir) {
    ReportResult rep;
    rep.rows = json::array();
    std::vector<fs::path> runs;
    for (const auto& d : dirs) {
        const fs::path p(d);
        if (!fs::exists(p)) {
            rep.warnings.push_back("missing directory " + d);
            continue;
        }
        if (fs::exists(p / "manifest.json")) {
            runs.push_back(p);
            continue;
        }
        std::vector<fs::path> sub;
        if (fs::is_directory(p))
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_directory() && fs::exists(e.path() / "manifest.json")) sub.push_back(e.path());
        std::sort(sub.begin(), sub.end());
        if (sub.empty()) rep.warnings.push_back("no manifest found under " + d);
        runs.insert(runs.end(), sub.begin(), sub.end());
    }
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    std::vector<Run> loaded;
    for (const auto& r : runs) {
        Run run{r, {}, {}};
        try {
            std::ifstream is(r / "manifest.json");
            run.manifest = json::parse(is);
        } catch (const std::exception& e) {
            rep.warnings.push_back("unreadable manifest in " + r.string() + ": " + e.what());
            continue;
        }
        try {
            std::ifstream is(r / "summary.json");
            if (is) run.summary = json::parse(is);
        } catch (const std::exception&) {
            rep.warnings.push_back("unreadable summary in " + r.string());
        }
        const json files = run.manifest.value("files", json::object());
        for (const auto& [name, sum] : files.items()) {
            if (!fs::exists(r / name))
                rep.warnings.push_back(r.string() + ": listed file " + name + " is missing");
            else if (sha256_file((r / name).string()) != sum.get<std::string>())
                rep.warnings.push_back(r.string() + ": checksum mismatch for " + name);
        }
        std::string failed;
        const json checks = run.manifest.value("checks", json::array());
        for (const auto& c : checks)
            if (!c.value("pass", false)) failed += (failed.empty() ? "" : " ") + c.value("name", std::string("?"));
        rep.rows.push_back({{"dir", r.filename().string()},
                            {"subcommand", run.manifest.value("subcommand", "")},
                            {"criterion", run.manifest.value("criterion", 0)},
                            {"status", run.manifest.value("pass", false) ? "pass" : "fail"},
                            {"failed_checks", failed},
                            {"wall_seconds", run.manifest.value("wall_seconds", 0.0)}});
        loaded.push_back(std::move(run));
    }
    std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const json& a, const json& b) {
        const int ca = a["criterion"], cb = b["criterion"];
        return (ca == 0 ? 1000 : ca) < (cb == 0 ? 1000 : cb);
    });
    {
        std::ofstream md(out / "report.md");
        md << "# Run report\n\n";
        if (rep.rows.empty()) md << "No runs found.\n";
        else {
            md << "| criterion | run | subcommand | status | failed checks | seconds |\n|---|---|---|---|---|---|\n";
            for (const auto& r : rep.rows)
                md << "| " << (r["criterion"].get<int>() ? std::to_string(r["criterion"].get<int>()) : "-") << " | "
                   << r["dir"].get<std::string>() << " | " << r["subcommand"].get<std::string>() << " | "
                   << r["status"].get<std::string>() << " | " << r["failed_checks"].get<std::string>() << " | "
                   << fmt(std::round(r["wall_seconds"].get<double>() * 10) / 10) << " |\n";
        }
        if (!rep.warnings.empty()) {
            md << "\n## Warnings\n\n";
            for (const auto& w : rep.warnings) md << "- " << w << "\n";
        }
        std::ofstream csv(out / "report.csv");
        csv << "criterion,run,subcommand,status,failed_checks\n";
        for (const auto& r : rep.rows)
            csv << r["criterion"].get<int>() << ',' << r["dir"].get<std::string>() << ',' << r["subcommand"].get<std::string>()
                << ',' << r["status"].get<std::string>() << ',' << r["failed_checks"].get<std::string>() << '\n';
    }
    for (const auto& run : loaded) {
        try {
            plot_sandwich(run, out, rep);
            plot_martingale(run, out, rep);
            plot_gumbel_qq(run, out, rep);
            plot_confinement(run, out, rep);
            plot_mu_hat(run, out, rep);
        } catch (const std::exception& e) {
            rep.warnings.push_back("plot failed for " + run.dir.string() + ": " + e.what());
        }
    }
    return rep;
}

}  // namespace bbmlab
