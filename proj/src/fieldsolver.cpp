#include "qloss/fieldsolver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "qloss/common.hpp"

namespace qloss {

namespace {

constexpr int kDirichlet = -1;

// Derivative at the origin of the quadratic through (0,f0), (a,f1), (b,f2).
double deriv3(double f0, double f1, double f2, double a, double b) {
    double w0 = -(a + b) / (a * b);
    double w1 = -b / (a * (a - b));
    double w2 = -a / (b * (b - a));
    return w0 * f0 + w1 * f1 + w2 * f2;
}

struct GridIndexer {
    const CrossSection* section;
    const Mesh* mesh;
    Eigen::Index nx, ny, j0;
    std::vector<int> owner;       // per surface column: conductor idx or -1
    std::vector<int> map;         // node -> unknown index, or kDirichlet
    std::vector<double> dirvalue; // node -> Dirichlet value (when kDirichlet)
    int n_unknowns = 0;

    Eigen::Index node(Eigen::Index ix, Eigen::Index iy) const { return iy * nx + ix; }

    double cell_eps(Eigen::Index jcell) const {
        return (jcell < j0) ? section->substrate_eps : 1.0;
    }
};

GridIndexer classify(const CrossSection& section, const Mesh& mesh,
                     const Drive& drive) {
    GridIndexer g;
    g.section = &section;
    g.mesh = &mesh;
    g.nx = mesh.nx();
    g.ny = mesh.ny();
    g.j0 = mesh.surface_row;

    const double tol = 1e-9 * std::max(section.box_halfwidth, 1e-12);
    g.owner.assign(static_cast<size_t>(g.nx), -1);
    for (Eigen::Index ix = 0; ix < g.nx; ++ix) {
        double x = mesh.x[ix];
        for (size_t c = 0; c < section.conductors.size(); ++c) {
            if (x >= section.conductors[c].x_min - tol &&
                x <= section.conductors[c].x_max + tol) {
                g.owner[static_cast<size_t>(ix)] = static_cast<int>(c);
                break;
            }
        }
    }

    // Floating conductors collapse to one shared unknown (a supernode);
    // its row sums the member-node equations, which enforces zero net charge.
    std::vector<int> float_unknown(section.conductors.size(), -1);

    g.map.assign(static_cast<size_t>(g.nx * g.ny), kDirichlet);
    g.dirvalue.assign(static_cast<size_t>(g.nx * g.ny), 0.0);
    int next = 0;
    for (Eigen::Index iy = 0; iy < g.ny; ++iy) {
        for (Eigen::Index ix = 0; ix < g.nx; ++ix) {
            size_t n = static_cast<size_t>(g.node(ix, iy));
            bool outer = (ix == 0 || ix == g.nx - 1 || iy == 0 || iy == g.ny - 1);
            if (outer) continue; // grounded box
            int c = (iy == g.j0) ? g.owner[static_cast<size_t>(ix)] : -1;
            if (c >= 0) {
                Terminal t = section.conductors[static_cast<size_t>(c)].terminal;
                if (t == Terminal::Floating) {
                    if (float_unknown[static_cast<size_t>(c)] < 0)
                        float_unknown[static_cast<size_t>(c)] = next++;
                    g.map[n] = float_unknown[static_cast<size_t>(c)];
                } else {
                    double v = (t == Terminal::Plus)    ? drive.plus
                               : (t == Terminal::Minus) ? drive.minus
                                                        : drive.ground;
                    g.dirvalue[n] = v;
                }
            } else {
                g.map[n] = next++;
            }
        }
    }
    g.n_unknowns = next;
    return g;
}

// Conductance of the grid edge between (ix,iy) and its +x neighbor.
double cond_x(const GridIndexer& g, Eigen::Index ix, Eigen::Index iy) {
    const Mesh& m = *g.mesh;
    double dx = m.x[ix + 1] - m.x[ix];
    double w = 0.0;
    if (iy > 0) w += g.cell_eps(iy - 1) * (m.y[iy] - m.y[iy - 1]) * 0.5;
    if (iy < g.ny - 1) w += g.cell_eps(iy) * (m.y[iy + 1] - m.y[iy]) * 0.5;
    return w / dx;
}

// Conductance of the grid edge between (ix,iy) and its +y neighbor.
double cond_y(const GridIndexer& g, Eigen::Index ix, Eigen::Index iy) {
    const Mesh& m = *g.mesh;
    double dy = m.y[iy + 1] - m.y[iy];
    double w = 0.0;
    if (ix > 0) w += (m.x[ix] - m.x[ix - 1]) * 0.5;
    if (ix < g.nx - 1) w += (m.x[ix + 1] - m.x[ix]) * 0.5;
    return w * g.cell_eps(iy) / dy;
}

template <typename F>
void for_each_edge(const GridIndexer& g, F&& f) {
    for (Eigen::Index iy = 0; iy < g.ny; ++iy)
        for (Eigen::Index ix = 0; ix + 1 < g.nx; ++ix)
            f(g.node(ix, iy), g.node(ix + 1, iy), cond_x(g, ix, iy));
    for (Eigen::Index iy = 0; iy + 1 < g.ny; ++iy)
        for (Eigen::Index ix = 0; ix < g.nx; ++ix)
            f(g.node(ix, iy), g.node(ix, iy + 1), cond_y(g, ix, iy));
}

Eigen::VectorXd solve_system(int n, const std::vector<Eigen::Triplet<double>>& trips,
                             const Eigen::VectorXd& rhs, double* residual) {
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("field solve failed: singular system");
    Eigen::VectorXd v = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("field solve failed in back-substitution");
    *residual = (A * v - rhs).norm();
    return v;
}

} // namespace

FieldSolution solve(const CrossSection& section, const Mesh& mesh,
                    const Drive& drive) {
    bool driven = false;
    for (const auto& c : section.conductors)
        if (c.terminal != Terminal::Floating) driven = true;
    if (!driven) throw std::invalid_argument("no driven conductor");

    GridIndexer g = classify(section, mesh, drive);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(5 * g.n_unknowns));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(g.n_unknowns);
    for_each_edge(g, [&](Eigen::Index na, Eigen::Index nb, double c) {
        int ua = g.map[static_cast<size_t>(na)];
        int ub = g.map[static_cast<size_t>(nb)];
        if (ua >= 0) trips.emplace_back(ua, ua, c);
        if (ub >= 0) trips.emplace_back(ub, ub, c);
        if (ua >= 0 && ub >= 0) {
            if (ua != ub) {
                trips.emplace_back(ua, ub, -c);
                trips.emplace_back(ub, ua, -c);
            } else {
                // both endpoints on the same floating supernode
                trips.emplace_back(ua, ua, -c);
                trips.emplace_back(ua, ua, -c);
            }
        } else if (ua >= 0) {
            rhs[ua] += c * g.dirvalue[static_cast<size_t>(nb)];
        } else if (ub >= 0) {
            rhs[ub] += c * g.dirvalue[static_cast<size_t>(na)];
        }
    });

    double residual = 0.0;
    Eigen::VectorXd u;
    if (g.n_unknowns > 0) u = solve_system(g.n_unknowns, trips, rhs, &residual);

    double drive_scale = std::max({std::abs(drive.plus), std::abs(drive.minus),
                                   std::abs(drive.ground), 1e-30});
    if (residual > 1e-10 * drive_scale * std::sqrt(double(std::max(g.n_unknowns, 1))))
        throw std::runtime_error("field solve did not reach residual tolerance");

    FieldSolution sol;
    sol.section = section;
    sol.mesh = mesh;
    sol.residual = residual;
    sol.potential.resize(g.nx, g.ny);
    for (Eigen::Index iy = 0; iy < g.ny; ++iy) {
        for (Eigen::Index ix = 0; ix < g.nx; ++ix) {
            size_t n = static_cast<size_t>(g.node(ix, iy));
            sol.potential(ix, iy) = (g.map[n] >= 0) ? u[g.map[n]] : g.dirvalue[n];
        }
    }

    // Conductor potentials.
    sol.conductor_potentials.assign(section.conductors.size(), 0.0);
    for (size_t c = 0; c < section.conductors.size(); ++c) {
        for (Eigen::Index ix = 0; ix < g.nx; ++ix) {
            if (g.owner[static_cast<size_t>(ix)] == static_cast<int>(c)) {
                sol.conductor_potentials[c] = sol.potential(ix, g.j0);
                break;
            }
        }
    }

    // Charges from flux sums over incident edges.
    sol.conductor_charges.assign(section.conductors.size(), 0.0);
    double qbound = 0.0;
    auto node_tag = [&](Eigen::Index n) -> int {
        // conductor index, or -2 for outer boundary, or -1 otherwise
        Eigen::Index iy = n / g.nx, ix = n % g.nx;
        if (ix == 0 || ix == g.nx - 1 || iy == 0 || iy == g.ny - 1) return -2;
        if (iy == g.j0) return g.owner[static_cast<size_t>(ix)];
        return -1;
    };
    auto vat = [&](Eigen::Index n) {
        return sol.potential(n % g.nx, n / g.nx);
    };
    for_each_edge(g, [&](Eigen::Index na, Eigen::Index nb, double c) {
        int ta = node_tag(na), tb = node_tag(nb);
        double flux_ab = c * (vat(na) - vat(nb));
        if (ta != tb || ta == -1) {
            if (ta >= 0) sol.conductor_charges[static_cast<size_t>(ta)] += eps0 * flux_ab;
            if (tb >= 0) sol.conductor_charges[static_cast<size_t>(tb)] -= eps0 * flux_ab;
            if (ta == -2) qbound += eps0 * flux_ab;
            if (tb == -2) qbound -= eps0 * flux_ab;
        }
    });
    sol.boundary_charge = qbound;

    double e = 0.0;
    for (size_t c = 0; c < section.conductors.size(); ++c)
        e += 0.5 * sol.conductor_charges[c] * sol.conductor_potentials[c];
    sol.energy_pul = e;
    return sol;
}

EnergyPair energy(const FieldSolution& sol) {
    EnergyPair out;
    out.charge_sum = sol.energy_pul;

    const Mesh& m = sol.mesh;
    const Eigen::MatrixXd& V = sol.potential;
    double acc = 0.0;
    for (Eigen::Index jc = 0; jc + 1 < m.ny(); ++jc) {
        double dy = m.y[jc + 1] - m.y[jc];
        double eps = (jc < m.surface_row) ? sol.section.substrate_eps : 1.0;
        for (Eigen::Index ic = 0; ic + 1 < m.nx(); ++ic) {
            double dx = m.x[ic + 1] - m.x[ic];
            double ex = -0.5 *
                        ((V(ic + 1, jc) - V(ic, jc)) + (V(ic + 1, jc + 1) - V(ic, jc + 1))) /
                        dx;
            double ey = -0.5 *
                        ((V(ic, jc + 1) - V(ic, jc)) + (V(ic + 1, jc + 1) - V(ic + 1, jc))) /
                        dy;
            acc += 0.5 * eps0 * eps * (ex * ex + ey * ey) * dx * dy;
        }
    }
    out.field_integral = acc;
    return out;
}

Extrapolation extrapolate(double coarse, double mid, double fine) {
    Extrapolation r;
    double d1 = mid - coarse;
    double d2 = fine - mid;
    double scale = std::max({std::abs(coarse), std::abs(mid), std::abs(fine), 1e-300});
    if (std::abs(d1) <= 1e-14 * scale && std::abs(d2) <= 1e-14 * scale) {
        r.value = fine;
        r.error = 0.0;
        r.order = 0.0;
        r.reliable = true;
        return r;
    }
    if (d1 * d2 <= 0.0 || std::abs(d2) >= std::abs(d1)) {
        // oscillating or non-contracting sequence
        r.value = fine;
        r.error = std::abs(d2);
        r.order = 0.0;
        r.reliable = false;
        return r;
    }
    double p = std::log2(std::abs(d1) / std::abs(d2));
    r.order = p;
    if (p < 0.4) {
        r.value = fine;
        r.error = std::abs(d2);
        r.reliable = false;
        return r;
    }
    r.value = fine + d2 / (std::pow(2.0, p) - 1.0);
    r.error = std::abs(r.value - fine);
    r.reliable = true;
    return r;
}

std::vector<SurfaceSample> surface_fields(const FieldSolution& sol) {
    const Mesh& m = sol.mesh;
    const Eigen::MatrixXd& V = sol.potential;
    const Eigen::Index j0 = m.surface_row;
    const Eigen::Index nx = m.nx();

    const double tol = 1e-9 * std::max(sol.section.box_halfwidth, 1e-12);
    std::vector<SurfaceSample> out;
    out.reserve(static_cast<size_t>(nx));
    for (Eigen::Index ix = 0; ix < nx; ++ix) {
        SurfaceSample s;
        s.x = m.x[ix];
        s.conductor = -1;
        for (size_t c = 0; c < sol.section.conductors.size(); ++c) {
            if (s.x >= sol.section.conductors[c].x_min - tol &&
                s.x <= sol.section.conductors[c].x_max + tol) {
                s.conductor = static_cast<int>(c);
                break;
            }
        }

        if (s.conductor >= 0 || ix == 0 || ix == nx - 1) {
            s.e_par = 0.0;
        } else {
            double a = m.x[ix - 1] - m.x[ix];
            double b = m.x[ix + 1] - m.x[ix];
            s.e_par = -deriv3(V(ix, j0), V(ix - 1, j0), V(ix + 1, j0), a, b);
        }

        double a_up = m.y[j0 + 1] - m.y[j0];
        double b_up = m.y[j0 + 2] - m.y[j0];
        s.e_perp_vac = -deriv3(V(ix, j0), V(ix, j0 + 1), V(ix, j0 + 2), a_up, b_up);

        double a_dn = m.y[j0 - 1] - m.y[j0];
        double b_dn = m.y[j0 - 2] - m.y[j0];
        s.e_perp_sub = -deriv3(V(ix, j0), V(ix, j0 - 1), V(ix, j0 - 2), a_dn, b_dn);
        out.push_back(s);
    }
    return out;
}

void dump_field_csv(const FieldSolution& sol, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write field dump: " + path);
    out << "x_m,y_m,V\n";
    char buf[128];
    for (Eigen::Index iy = 0; iy < sol.mesh.ny(); ++iy) {
        for (Eigen::Index ix = 0; ix < sol.mesh.nx(); ++ix) {
            std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", sol.mesh.x[ix],
                          sol.mesh.y[iy], sol.potential(ix, iy));
            out << buf;
        }
    }
}

PlateSolution solve_parallel_plate(const std::vector<PlateLayer>& layers,
                                   double v_bottom, double v_top,
                                   int cells_per_layer, int nx) {
    if (layers.empty()) throw std::invalid_argument("no layers");
    if (cells_per_layer < 3 || nx < 3) throw std::invalid_argument("grid too coarse");
    for (const auto& l : layers)
        if (!(l.thickness > 0.0) || !(l.eps >= 1.0))
            throw std::invalid_argument("bad layer");

    std::vector<double> ys{0.0};
    std::vector<double> cell_eps;
    for (const auto& l : layers) {
        double h = l.thickness / cells_per_layer;
        for (int k = 0; k < cells_per_layer; ++k) {
            ys.push_back(ys.back() + h);
            cell_eps.push_back(l.eps);
        }
    }
    const Eigen::Index ny = static_cast<Eigen::Index>(ys.size());
    const double width = 1.0;
    const double dx = width / (nx - 1);

    auto idx = [&](int ix, Eigen::Index iy) { return static_cast<int>(iy - 1) * nx + ix; };
    const int n = static_cast<int>(ny - 2) * nx;
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (Eigen::Index iy = 1; iy + 1 < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            int u = idx(ix, iy);
            // vertical neighbors
            for (int s : {-1, +1}) {
                Eigen::Index jn = iy + s;
                Eigen::Index jcell = (s < 0) ? iy - 1 : iy;
                double dy = ys[static_cast<size_t>(jcell) + 1] - ys[static_cast<size_t>(jcell)];
                double w = (ix == 0 || ix == nx - 1) ? 0.5 * dx : dx;
                double c = w * cell_eps[static_cast<size_t>(jcell)] / dy;
                trips.emplace_back(u, u, c);
                if (jn == 0) rhs[u] += c * v_bottom;
                else if (jn == ny - 1) rhs[u] += c * v_top;
                else trips.emplace_back(u, idx(ix, jn), -c);
            }
            // horizontal neighbors (Neumann side walls: simply absent edges)
            for (int s : {-1, +1}) {
                int in = ix + s;
                if (in < 0 || in >= nx) continue;
                double w = 0.0;
                double e_lo = cell_eps[static_cast<size_t>(iy - 1)];
                double e_hi = cell_eps[static_cast<size_t>(iy)];
                w += e_lo * (ys[static_cast<size_t>(iy)] - ys[static_cast<size_t>(iy - 1)]) * 0.5;
                w += e_hi * (ys[static_cast<size_t>(iy) + 1] - ys[static_cast<size_t>(iy)]) * 0.5;
                double c = w / dx;
                trips.emplace_back(u, u, c);
                trips.emplace_back(u, idx(in, iy), -c);
            }
        }
    }
    double residual = 0.0;
    Eigen::VectorXd u = solve_system(n, trips, rhs, &residual);

    PlateSolution ps;
    ps.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), ny);
    ps.v_bottom = v_bottom;
    ps.v_top = v_top;
    ps.potential.resize(nx, ny);
    for (Eigen::Index iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            double v = (iy == 0)        ? v_bottom
                       : (iy == ny - 1) ? v_top
                                        : u[idx(ix, iy)];
            ps.potential(ix, iy) = v;
        }
    }

    int mid = nx / 2;
    double a = ys[1] - ys[0];
    double b = ys[2] - ys[0];
    ps.e_perp_bottom = -deriv3(ps.potential(mid, 0), ps.potential(mid, 1),
                               ps.potential(mid, 2), a, b);

    double acc = 0.0;
    for (Eigen::Index jc = 0; jc + 1 < ny; ++jc) {
        double dy = ys[static_cast<size_t>(jc) + 1] - ys[static_cast<size_t>(jc)];
        double ey = -(ps.potential(mid, jc + 1) - ps.potential(mid, jc)) / dy;
        acc += 0.5 * eps0 * cell_eps[static_cast<size_t>(jc)] * ey * ey * dy;
    }
    ps.energy_per_area = acc;
    return ps;
}

CoaxResult solve_coax(double a, double b, int level, int base_cells) {
    if (!(a > 0.0) || !(b > a)) throw std::invalid_argument("need 0 < a < b");
    if (level < 0) throw std::invalid_argument("level must be nonnegative");
    const int N = base_cells << level;
    const double h = 2.0 * b / N;
    const int nn = N + 1;
    const double v0 = 1.0;

    auto coord = [&](int i) { return -b + i * h; };
    auto radius = [&](int i, int j) { return std::hypot(coord(i), coord(j)); };

    // 0: unknown, 1: inner conductor (V=v0), 2: outer region (V=0)
    std::vector<int> kind(static_cast<size_t>(nn) * nn);
    std::vector<int> map(static_cast<size_t>(nn) * nn, kDirichlet);
    auto at = [&](int i, int j) { return static_cast<size_t>(j) * nn + i; };
    int n_unknowns = 0;
    for (int j = 0; j < nn; ++j) {
        for (int i = 0; i < nn; ++i) {
            double r = radius(i, j);
            const double snap = 1e-9 * b;
            int k = 0;
            if (r <= a + snap) k = 1;
            else if (r >= b - snap) k = 2;
            kind[at(i, j)] = k;
            if (k == 0) map[at(i, j)] = n_unknowns++;
        }
    }

    // Fraction along the edge from unknown P to Dirichlet Q where the circle
    // of radius R is crossed.
    auto cross_frac = [&](double px, double py, double qx, double qy, double R) {
        double dx = qx - px, dy = qy - py;
        double A = dx * dx + dy * dy;
        double B = 2.0 * (px * dx + py * dy);
        double C = px * px + py * py - R * R;
        double disc = B * B - 4.0 * A * C;
        if (disc < 0.0) disc = 0.0;
        double s = std::sqrt(disc);
        double t1 = (-B - s) / (2.0 * A);
        double t2 = (-B + s) / (2.0 * A);
        double t = (t1 > 1e-12 && t1 <= 1.0 + 1e-12) ? t1 : t2;
        return std::clamp(t, 1e-9, 1.0);
    };

    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_unknowns);
    struct CutEdge {
        int unknown;
        double c;
    };
    std::vector<CutEdge> inner_cuts;

    auto handle_edge = [&](int i0, int j0, int i1, int j1) {
        int ka = kind[at(i0, j0)], kb = kind[at(i1, j1)];
        if (ka != 0 && kb != 0) return;
        if (ka == 0 && kb == 0) {
            int ua = map[at(i0, j0)], ub = map[at(i1, j1)];
            double c = 1.0; // w/h with w = h on a uniform grid
            trips.emplace_back(ua, ua, c);
            trips.emplace_back(ub, ub, c);
            trips.emplace_back(ua, ub, -c);
            trips.emplace_back(ub, ua, -c);
            return;
        }
        // one unknown endpoint, one conductor endpoint; shorten the leg to
        // the circle crossing (Shortley-Weller)
        int ui, di;
        if (ka == 0) { ui = 0; di = 1; }
        else { ui = 1; di = 0; }
        int iu = (ui == 0) ? i0 : i1, ju = (ui == 0) ? j0 : j1;
        int id = (di == 0) ? i0 : i1, jd = (di == 0) ? j0 : j1;
        int dkind = kind[at(id, jd)];
        double R = (dkind == 1) ? a : b;
        double t = cross_frac(coord(iu), coord(ju), coord(id), coord(jd), R);
        double c = 1.0 / t; // (w/h) / t
        int u = map[at(iu, ju)];
        trips.emplace_back(u, u, c);
        double vdir = (dkind == 1) ? v0 : 0.0;
        rhs[u] += c * vdir;
        if (dkind == 1) inner_cuts.push_back({u, c});
    };

    for (int j = 0; j < nn; ++j)
        for (int i = 0; i + 1 < nn; ++i) handle_edge(i, j, i + 1, j);
    for (int j = 0; j + 1 < nn; ++j)
        for (int i = 0; i < nn; ++i) handle_edge(i, j, i, j + 1);

    double residual = 0.0;
    Eigen::VectorXd u = solve_system(n_unknowns, trips, rhs, &residual);
    if (residual > 1e-8 * rhs.norm())
        throw std::runtime_error("coax solve did not reach residual tolerance");

    double q = 0.0;
    for (const auto& ce : inner_cuts) q += ce.c * (v0 - u[ce.unknown]);
    CoaxResult res;
    res.capacitance = eps0 * q / v0;
    res.grid_n = N;
    return res;
}

} // namespace qloss
