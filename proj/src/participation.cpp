#include "qloss/participation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "qloss/common.hpp"

namespace qloss {

const ParticipationEntry& ParticipationReport::at(Interface i) const {
    switch (i) {
        case Interface::SM: return sm;
        case Interface::SV: return sv;
        case Interface::MV: return mv;
    }
    throw std::logic_error("bad interface");
}

ParticipationEntry& ParticipationReport::at(Interface i) {
    switch (i) {
        case Interface::SM: return sm;
        case Interface::SV: return sv;
        case Interface::MV: return mv;
    }
    throw std::logic_error("bad interface");
}

double SensitivityVector::channel(Interface i) const {
    switch (i) {
        case Interface::SM: return r_sm;
        case Interface::SV: return r_sv;
        case Interface::MV: return r_mv;
    }
    throw std::logic_error("bad interface");
}

double thin_layer_perp_density(double e_out, double eps_out, double eps_layer) {
    double d_over_eps0 = eps_out * e_out; // D_perp / eps0, continuous
    return 0.5 * eps0 * d_over_eps0 * d_over_eps0 / eps_layer;
}

double thin_layer_par_density(double e_par, double eps_layer) {
    return 0.5 * eps0 * eps_layer * e_par * e_par;
}

namespace {

double perp_density(double e_out, double eps_out, double eps_layer) {
    return thin_layer_perp_density(e_out, eps_out, eps_layer);
}

double par_density(double e_par, double eps_layer) {
    return thin_layer_par_density(e_par, eps_layer);
}

struct LineIntegral {
    double value = 0.0;   // integral of u dl over kept intervals (J/m^2)
    double clipped = 0.0; // rough estimate of the clipped contribution
};

// Exclusion zones around conductor edges. The clip width is the level-0
// minimum cell (local feature / 200) so that refining the mesh keeps the
// integration domain fixed; the field singularity at each edge stays
// outside the kept domain at every level.
std::vector<std::pair<double, double>> clip_zones(const CrossSection& section) {
    std::vector<Conductor> sorted = section.conductors;
    std::sort(sorted.begin(), sorted.end(),
              [](const Conductor& a, const Conductor& b) { return a.x_min < b.x_min; });
    std::vector<std::pair<double, double>> zones;
    for (size_t k = 0; k < sorted.size(); ++k) {
        double width = sorted[k].x_max - sorted[k].x_min;
        double gap_l = (k > 0) ? sorted[k].x_min - sorted[k - 1].x_max
                               : std::numeric_limits<double>::infinity();
        double gap_r = (k + 1 < sorted.size()) ? sorted[k + 1].x_min - sorted[k].x_max
                                               : std::numeric_limits<double>::infinity();
        double cl = std::min(width, gap_l) / 200.0;
        double cr = std::min(width, gap_r) / 200.0;
        zones.emplace_back(sorted[k].x_min - cl, sorted[k].x_min + cl);
        zones.emplace_back(sorted[k].x_max - cr, sorted[k].x_max + cr);
    }
    return zones;
}

// Integrate the density over surface intervals of the requested kind
// (metal or gap), excluding the clip zones around conductor edges.
template <typename Density>
LineIntegral integrate_surface(const FieldSolution& sol,
                               const std::vector<SurfaceSample>& samples,
                               bool metal, Density&& u) {
    const auto zones = clip_zones(sol.section);

    LineIntegral out;
    for (size_t i = 0; i + 1 < samples.size(); ++i) {
        const auto& sa = samples[i];
        const auto& sb = samples[i + 1];
        bool interval_metal = sa.conductor >= 0 && sa.conductor == sb.conductor;
        bool interval_gap = sa.conductor < 0 && sb.conductor < 0;
        if (metal ? !interval_metal : !interval_gap) {
            // mixed edge-straddling interval; always inside a clip zone
            if ((metal && (sa.conductor >= 0 || sb.conductor >= 0)) ||
                (!metal && (sa.conductor < 0 || sb.conductor < 0))) {
                const auto& keep = metal ? (sa.conductor >= 0 ? sa : sb)
                                         : (sa.conductor < 0 ? sa : sb);
                out.clipped += u(keep) * (sb.x - sa.x);
            }
            continue;
        }

        double ua = u(sa), ub = u(sb);
        double lo = sa.x, hi = sb.x;
        auto interp = [&](double x) {
            double f = (x - sa.x) / (sb.x - sa.x);
            return ua * (1.0 - f) + ub * f;
        };
        // trim against the clip zones (they never split an interval in two
        // because zones are centered on segment endpoints)
        for (const auto& [zl, zr] : zones) {
            if (zr <= lo || zl >= hi) continue;
            if (zl <= lo && zr >= hi) {
                out.clipped += 0.5 * (interp(lo) + interp(hi)) * (hi - lo);
                lo = hi;
                break;
            }
            if (zl <= lo) {
                out.clipped += 0.5 * (interp(lo) + interp(zr)) * (zr - lo);
                lo = zr;
            } else if (zr >= hi) {
                out.clipped += 0.5 * (interp(zl) + interp(hi)) * (hi - zl);
                hi = zl;
            }
        }
        if (hi > lo)
            out.value += 0.5 * (interp(lo) + interp(hi)) * (hi - lo);
    }
    return out;
}

bool has_metal(const CrossSection& s) { return !s.conductors.empty(); }

bool has_gap(const FieldSolution& sol, const std::vector<SurfaceSample>& samples) {
    (void)sol;
    for (const auto& s : samples)
        if (s.conductor < 0) return true;
    return false;
}

ParticipationEntry entry_for(const FieldSolution& sol,
                             const std::vector<SurfaceSample>& samples,
                             Interface which, double t, double eps_layer) {
    const double eps_sub = sol.section.substrate_eps;
    ParticipationEntry e;
    e.interface = which;

    bool present = (which == Interface::SV) ? has_gap(sol, samples)
                                            : has_metal(sol.section);
    if (!present) {
        e.present = false;
        return e;
    }

    LineIntegral li, li_alt;
    switch (which) {
        case Interface::SV:
            li = integrate_surface(sol, samples, false, [&](const SurfaceSample& s) {
                return par_density(s.e_par, eps_layer) +
                       perp_density(s.e_perp_vac, 1.0, eps_layer);
            });
            li_alt = integrate_surface(sol, samples, false, [&](const SurfaceSample& s) {
                return par_density(s.e_par, eps_layer) +
                       perp_density(s.e_perp_sub, eps_sub, eps_layer);
            });
            break;
        case Interface::SM:
            li = integrate_surface(sol, samples, true, [&](const SurfaceSample& s) {
                return perp_density(s.e_perp_sub, eps_sub, eps_layer);
            });
            li_alt = li;
            break;
        case Interface::MV:
            li = integrate_surface(sol, samples, true, [&](const SurfaceSample& s) {
                return perp_density(s.e_perp_vac, 1.0, eps_layer);
            });
            li_alt = li;
            break;
    }

    e.line_energy = li.value;
    e.R = t * li.value / sol.energy_pul;
    e.r = li.value / sol.energy_pul;
    e.r_alt = li_alt.value / sol.energy_pul;
    e.clip_fraction = (li.value > 0.0) ? li.clipped / li.value : 0.0;
    return e;
}

void check_thin_layer(const FieldSolution& sol, double t) {
    double feature = sol.section.min_feature();
    if (!(t > 0.0)) throw std::invalid_argument("layer thickness must be positive");
    if (t > feature / 100.0)
        throw std::invalid_argument("layer too thick for the thin-layer approximation");
}

} // namespace

ParticipationEntry participation(const FieldSolution& sol, const LayerSpec& layer) {
    check_thin_layer(sol, layer.thickness);
    auto samples = surface_fields(sol);
    return entry_for(sol, samples, layer.interface, layer.thickness, layer.eps_layer);
}

ParticipationReport participation_report(const FieldSolution& sol, double t,
                                         double eps_layer) {
    check_thin_layer(sol, t);
    auto samples = surface_fields(sol);
    ParticipationReport rep;
    rep.energy_pul = sol.energy_pul;
    rep.t = t;
    rep.eps_layer = eps_layer;
    rep.sm = entry_for(sol, samples, Interface::SM, t, eps_layer);
    rep.sv = entry_for(sol, samples, Interface::SV, t, eps_layer);
    rep.mv = entry_for(sol, samples, Interface::MV, t, eps_layer);
    return rep;
}

SensitivityVector combine(const DesignSpec& design,
                          const std::vector<ParticipationReport>& reports) {
    if (reports.size() != design.sections.size())
        throw std::invalid_argument("one participation report per section required");
    SensitivityVector v;
    v.design = design.name;
    double wu = 0.0;
    double wl_sm = 0.0, wl_sv = 0.0, wl_mv = 0.0;
    for (size_t k = 0; k < reports.size(); ++k) {
        double w = design.sections[k].second;
        wu += w * reports[k].energy_pul;
        wl_sm += w * reports[k].sm.line_energy;
        wl_sv += w * reports[k].sv.line_energy;
        wl_mv += w * reports[k].mv.line_energy;
    }
    v.r_sm = wl_sm / wu;
    v.r_sv = wl_sv / wu;
    v.r_mv = wl_mv / wu;
    return v;
}

SensitivityVector compute_design_sensitivity(const DesignSpec& design, double t,
                                             double eps_layer, int base_level,
                                             int n_levels) {
    if (n_levels < 1) throw std::invalid_argument("need at least one level");
    std::vector<SensitivityVector> per_level;
    for (int l = base_level; l < base_level + n_levels; ++l) {
        std::vector<ParticipationReport> reports;
        for (const auto& [section, weight] : design.sections) {
            (void)weight;
            Mesh mesh = build_mesh(section, l);
            FieldSolution sol = solve(section, mesh);
            reports.push_back(participation_report(sol, t, eps_layer));
        }
        per_level.push_back(combine(design, reports));
    }

    SensitivityVector v = per_level.back();
    if (n_levels < 3) {
        v.reliable = false;
        return v;
    }
    size_t n = per_level.size();
    auto ex = [&](auto member, double* out, double* err) {
        Extrapolation e = extrapolate(per_level[n - 3].*member, per_level[n - 2].*member,
                                      per_level[n - 1].*member);
        *out = e.value;
        *err = e.error;
        return e.reliable;
    };
    bool ok = true;
    ok &= ex(&SensitivityVector::r_sm, &v.r_sm, &v.err_sm);
    ok &= ex(&SensitivityVector::r_sv, &v.r_sv, &v.err_sv);
    ok &= ex(&SensitivityVector::r_mv, &v.r_mv, &v.err_mv);
    v.reliable = ok;
    return v;
}

void save_sensitivity_csv(const std::vector<SensitivityVector>& rows,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sensitivity csv: " + path);
    out << "design,r_SM_per_m,r_SV_per_m,r_MV_per_m,err_SM,err_SV,err_MV\n";
    char buf[256];
    for (const auto& v : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                      v.design.c_str(), v.r_sm, v.r_sv, v.r_mv, v.err_sm, v.err_sv,
                      v.err_mv);
        out << buf;
    }
}

std::vector<SensitivityVector> load_sensitivity_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sensitivity csv: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("empty sensitivity csv: " + path);
    std::vector<SensitivityVector> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected 7 columns");
        }
        try {
            SensitivityVector v;
            v.design = fields[0];
            v.r_sm = std::stod(fields[1]);
            v.r_sv = std::stod(fields[2]);
            v.r_mv = std::stod(fields[3]);
            v.err_sm = std::stod(fields[4]);
            v.err_sv = std::stod(fields[5]);
            v.err_mv = std::stod(fields[6]);
            rows.push_back(std::move(v));
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": malformed numeric field");
        }
    }
    return rows;
}

} // namespace qloss
