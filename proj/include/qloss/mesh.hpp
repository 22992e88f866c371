#ifndef QLOSS_MESH_HPP
#define QLOSS_MESH_HPP

#include <Eigen/Core>

#include "qloss/geometry.hpp"

namespace qloss {

// Nonuniform tensor-product grid. Conductor endpoints and the substrate
// surface y = 0 lie exactly on grid lines.
struct Mesh {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    int level = 0;
    double min_cell = 0.0;       // smallest cell adjacent to a conductor edge
    Eigen::Index surface_row = 0; // index j with y[j] == 0

    Eigen::Index nx() const { return x.size(); }
    Eigen::Index ny() const { return y.size(); }
};

// Geometrically graded 1D point set over [0, length] with target cell sizes
// h_left/h_right at the ends, growth ratio bounded by `ratio`, and cells
// capped at h_max (up to a 1.3x allowance for the single cell where the two
// grading fronts meet). Returns all breakpoints including 0 and length.
std::vector<double> grade_span(double length, double h_left, double h_right,
                               double ratio, double h_max);

// Successive levels halve the minimum cell near conductor edges
// (level-0 target: local feature size / 200).
Mesh build_mesh(const CrossSection& section, int level);

} // namespace qloss

#endif
