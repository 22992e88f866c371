#ifndef QLOSS_PARTICIPATION_HPP
#define QLOSS_PARTICIPATION_HPP

#include <string>
#include <vector>

#include "qloss/fieldsolver.hpp"
#include "qloss/geometry.hpp"

namespace qloss {

// Thin-layer participation of one interface, from a clean (layer-free)
// field solution.
struct ParticipationEntry {
    Interface interface = Interface::SV;
    double R = 0.0;          // dimensionless, R = t * line_energy / energy_pul
    double r = 0.0;          // 1/m, r = R / t
    double r_alt = 0.0;      // same quantity via the other side's normal field
    double line_energy = 0.0; // integral of layer energy density along y=0 (J/m^2)
    double clip_fraction = 0.0; // estimated clipped share of r, relative
    double err = 0.0;        // convergence error estimate on r (1/m)
    bool present = true;     // false when the interface is absent
    bool reliable = true;
};

struct ParticipationReport {
    double energy_pul = 0.0;
    double t = 0.0;
    double eps_layer = 0.0;
    ParticipationEntry sm, sv, mv;

    const ParticipationEntry& at(Interface i) const;
    ParticipationEntry& at(Interface i);
};

// Thin-film energy densities (J/m^3) from the clean-solve field just outside
// the film. Perpendicular: D-continuity gives E_film = eps_out*E_out/eps_layer;
// parallel: E is continuous into the film.
double thin_layer_perp_density(double e_out, double eps_out, double eps_layer);
double thin_layer_par_density(double e_par, double eps_layer);

// Single-interface evaluation (throws if layer.thickness > min feature / 100).
ParticipationEntry participation(const FieldSolution& solution, const LayerSpec& layer);

// All three interfaces with shared t and eps_layer.
ParticipationReport participation_report(const FieldSolution& solution, double t,
                                         double eps_layer);

struct SensitivityVector {
    std::string design;
    double r_sm = 0.0, r_sv = 0.0, r_mv = 0.0; // 1/m
    double err_sm = 0.0, err_sv = 0.0, err_mv = 0.0;
    bool reliable = true;

    double channel(Interface i) const;
};

// Energy-weighted combination of per-section reports into one design vector.
SensitivityVector combine(const DesignSpec& design,
                          const std::vector<ParticipationReport>& reports);

// Full pipeline: mesh, solve and combine at `n_levels` successive refinement
// levels, Richardson-extrapolating each channel. n_levels >= 3 yields error
// estimates; fewer levels report the finest value with err = 0 and
// reliable = false.
SensitivityVector compute_design_sensitivity(const DesignSpec& design, double t,
                                             double eps_layer, int base_level = 0,
                                             int n_levels = 3);

// Sensitivity CSV: design,r_SM_per_m,r_SV_per_m,r_MV_per_m,err_SM,err_SV,err_MV
void save_sensitivity_csv(const std::vector<SensitivityVector>& rows,
                          const std::string& path);
std::vector<SensitivityVector> load_sensitivity_csv(const std::string& path);

} // namespace qloss

#endif
