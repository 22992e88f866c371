#include "qloss/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qloss {

std::vector<double> grade_span(double length, double h_left, double h_right,
                               double ratio, double h_max) {
    if (!(length > 0.0)) throw std::invalid_argument("span length must be positive");
    if (!(h_left > 0.0) || !(h_right > 0.0))
        throw std::invalid_argument("end cell sizes must be positive");
    if (!(ratio > 1.0)) throw std::invalid_argument("growth ratio must exceed 1");
    if (!(h_max > 0.0)) throw std::invalid_argument("h_max must be positive");
    h_max = std::min(h_max, length);
    h_left = std::min(h_left, h_max);
    h_right = std::min(h_right, h_max);

    std::vector<double> left{0.0};
    std::vector<double> right{length};
    double ha = h_left, hb = h_right;
    double a = 0.0, b = length;
    while (b - a > std::max(ha, hb)) {
        if (ha <= hb) {
            a += ha;
            left.push_back(a);
            ha = std::min(ha * ratio, h_max);
        } else {
            b -= hb;
            right.push_back(b);
            hb = std::min(hb * ratio, h_max);
        }
    }
    // Residual middle gap; absorb it if negligible against its neighbors.
    double gap = b - a;
    double neighbor = std::min(ha, hb);
    if (gap < 0.3 * neighbor && left.size() + right.size() > 2) {
        if (left.size() > 1 && left.size() >= right.size()) {
            left.pop_back();
        } else if (right.size() > 1) {
            right.pop_back();
        }
    }
    std::vector<double> pts = left;
    for (auto it = right.rbegin(); it != right.rend(); ++it) {
        if (*it > pts.back() + 1e-14 * length) pts.push_back(*it);
    }
    pts.back() = length;
    return pts;
}

namespace {

struct EdgeTarget {
    double x;
    double h; // level-adjusted minimum cell at this conductor edge
};

void append_span(std::vector<double>& out, double a, double b, double ha,
                 double hb, double ratio, double h_max) {
    auto pts = grade_span(b - a, ha, hb, ratio, h_max);
    for (size_t i = 1; i < pts.size(); ++i) out.push_back(a + pts[i]);
}

} // namespace

Mesh build_mesh(const CrossSection& section, int level) {
    if (level < 0) throw std::invalid_argument("mesh level must be nonnegative");
    auto rep = validate(section);
    if (!rep.ok) {
        std::string msg = "invalid cross-section:";
        for (const auto& v : rep.violations) msg += " " + v + ";";
        throw std::invalid_argument(msg);
    }

    const double ratio = 1.2;
    const double refine = std::pow(2.0, level);
    const double extent = section.pattern_extent();
    const double h_max = extent / 8.0;

    // Minimum cell at each conductor edge: local feature / 200 at level 0.
    std::vector<Conductor> sorted = section.conductors;
    std::sort(sorted.begin(), sorted.end(),
              [](const Conductor& a, const Conductor& b) { return a.x_min < b.x_min; });
    std::vector<EdgeTarget> edges;
    double h_global = h_max;
    for (size_t k = 0; k < sorted.size(); ++k) {
        double width = sorted[k].x_max - sorted[k].x_min;
        double gap_l = (k > 0) ? sorted[k].x_min - sorted[k - 1].x_max
                               : std::numeric_limits<double>::infinity();
        double gap_r = (k + 1 < sorted.size()) ? sorted[k + 1].x_min - sorted[k].x_max
                                               : std::numeric_limits<double>::infinity();
        double hl = std::min(width, gap_l) / 200.0 / refine;
        double hr = std::min(width, gap_r) / 200.0 / refine;
        edges.push_back({sorted[k].x_min, hl});
        edges.push_back({sorted[k].x_max, hr});
        h_global = std::min({h_global, hl, hr});
    }

    const double W = section.box_halfwidth;
    const double H = section.box_height;
    if (2.0 * W <= h_global || 2.0 * H <= h_global)
        throw std::invalid_argument("box too small for requested refinement");

    // x breakpoints: box edges plus conductor endpoints, graded between.
    std::vector<double> xs{-W};
    double prev_x = -W;
    double prev_h = h_max;
    for (const auto& e : edges) {
        append_span(xs, prev_x, e.x, prev_h, e.h, ratio, h_max);
        prev_x = e.x;
        prev_h = e.h;
    }
    append_span(xs, prev_x, W, prev_h, h_max, ratio, h_max);

    // y: graded away from the surface on both sides, finest cell = h_global.
    std::vector<double> ys_up = grade_span(H, h_global, h_max, ratio, h_max);
    std::vector<double> ys;
    for (auto it = ys_up.rbegin(); it != ys_up.rend(); ++it) ys.push_back(-*it);
    for (size_t i = 1; i < ys_up.size(); ++i) ys.push_back(ys_up[i]);

    Mesh m;
    m.level = level;
    m.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    m.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    m.surface_row = static_cast<Eigen::Index>(ys_up.size()) - 1;
    m.min_cell = h_global;
    return m;
}

} // namespace qloss
