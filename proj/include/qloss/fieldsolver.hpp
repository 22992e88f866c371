#ifndef QLOSS_FIELDSOLVER_HPP
#define QLOSS_FIELDSOLVER_HPP

#include <string>
#include <vector>

#include <Eigen/Core>

#include "qloss/geometry.hpp"
#include "qloss/mesh.hpp"

namespace qloss {

struct Drive {
    double plus = 0.5;
    double minus = -0.5;
    double ground = 0.0;
};

// Solution of the 2D boundary-value problem div(eps grad V) = 0 on a
// cross-section. Potentials in volts, charges per unit length in C/m,
// energy per unit length in J/m.
struct FieldSolution {
    CrossSection section;
    Mesh mesh;
    Eigen::MatrixXd potential;              // nx x ny node potentials
    std::vector<double> conductor_potentials; // incl. solved FLOATING values
    std::vector<double> conductor_charges;
    double boundary_charge = 0.0;           // induced on the grounded box
    double energy_pul = 0.0;                // charge-sum value
    double residual = 0.0;
};

FieldSolution solve(const CrossSection& section, const Mesh& mesh,
                    const Drive& drive = {});

// Two independent routes to the stored energy; they must agree to 0.5%
// on converged meshes. charge_sum is the reported value.
struct EnergyPair {
    double charge_sum = 0.0;     // (1/2) sum Q_i V_i
    double field_integral = 0.0; // (1/2) integral eps0 eps |grad V|^2 dA
};

EnergyPair energy(const FieldSolution& solution);

// Richardson extrapolation of a quantity computed at three successive
// refinement levels (mesh size halving each level).
struct Extrapolation {
    double value = 0.0;
    double error = 0.0; // |value - finest|
    double order = 0.0; // estimated convergence order
    bool reliable = true;
};

Extrapolation extrapolate(double coarse, double mid, double fine);

// Fields on the substrate surface y = 0 at every surface grid node.
// e_par is tangential (exactly zero on conductors), e_perp_* are the
// normal components just above / below the interface.
struct SurfaceSample {
    double x = 0.0;
    double e_par = 0.0;
    double e_perp_vac = 0.0;
    double e_perp_sub = 0.0;
    int conductor = -1; // index into section.conductors, -1 in gaps
};

std::vector<SurfaceSample> surface_fields(const FieldSolution& solution);

// Field dump for external plotting: CSV columns x_m, y_m, V.
void dump_field_csv(const FieldSolution& solution, const std::string& path);

// --- Analytic test fixtures ------------------------------------------------

// Uniform-field test mode: Dirichlet plates at y = 0 and y = d with a stack
// of dielectric layers in between and natural (Neumann) side walls.
struct PlateLayer {
    double thickness = 0.0;
    double eps = 1.0;
};

struct PlateSolution {
    Eigen::VectorXd y;        // node coordinates, 0..d
    Eigen::MatrixXd potential; // nx x ny
    double v_bottom = 0.0;
    double v_top = 0.0;
    double e_perp_bottom = 0.0; // normal E just above the bottom plate
    double energy_per_area = 0.0; // J/m^2 (per unit depth and width)
};

PlateSolution solve_parallel_plate(const std::vector<PlateLayer>& layers,
                                   double v_bottom, double v_top,
                                   int cells_per_layer = 8, int nx = 9);

// Concentric-circle capacitor solved on a uniform Cartesian grid with
// boundary-fitted (cut-edge) conductor surfaces. Capacitance in F/m.
struct CoaxResult {
    double capacitance = 0.0;
    int grid_n = 0;
};

CoaxResult solve_coax(double inner_radius, double outer_radius, int level,
                      int base_cells = 48);

} // namespace qloss

#endif
