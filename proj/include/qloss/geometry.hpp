#ifndef QLOSS_GEOMETRY_HPP
#define QLOSS_GEOMETRY_HPP

#include <string>
#include <vector>

namespace qloss {

enum class Terminal { Plus, Minus, Ground, Floating };

std::string to_string(Terminal t);
Terminal terminal_from_string(const std::string& s);

// Zero-thickness perfect conductor occupying [x_min, x_max] on the
// substrate surface y = 0. Lengths in meters.
struct Conductor {
    double x_min = 0.0;
    double x_max = 0.0;
    Terminal terminal = Terminal::Ground;
};

// One 2D cross-sectional electrostatic problem: conductors on the surface
// of a substrate filling the lower half-plane, grounded box boundary at
// x = +-box_halfwidth, y = +-box_height.
struct CrossSection {
    std::vector<Conductor> conductors;
    double substrate_eps = 10.0;
    double box_halfwidth = 0.0;
    double box_height = 0.0;
    std::string name;

    double pattern_min() const;
    double pattern_max() const;
    double pattern_extent() const { return pattern_max() - pattern_min(); }
    // Smallest gap between adjacent conductors, or smallest conductor
    // width if that is smaller. Used for mesh sizing and thin-layer checks.
    double min_feature() const;
};

// A device as a weighted set of cross-sections; the weight is the
// out-of-plane length (m) each section stands in for.
struct DesignSpec {
    std::string name;
    std::vector<std::pair<CrossSection, double>> sections;
};

enum class Interface { SM, SV, MV };

std::string to_string(Interface i);
Interface interface_from_string(const std::string& s);

// Hypothetical uniform lossy film on one interface.
struct LayerSpec {
    Interface interface = Interface::SV;
    double thickness = 3e-9;
    double eps_layer = 6.2;
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> violations;
};

ValidationReport validate(const CrossSection& section);

// The four benchmark designs, scaled uniformly. Throws on unknown name
// or non-positive scale.
DesignSpec reference_design(const std::string& name, double scale = 1.0);

bool is_reference_design(const std::string& name);

// 1D stacked-dielectric fixture: vacuum of thickness d - t in series with
// a film of thickness t and permittivity eps_layer. Closed forms used as
// oracles by the participation tests.
struct PlateFixture {
    double d = 0.0;         // plate spacing (m)
    double t = 0.0;         // film thickness (m)
    double eps_layer = 1.0;

    double vacuum_thickness() const { return d - t; }
    // Exact participation of the film for a perpendicular field.
    double participation() const {
        return (t / eps_layer) / ((d - t) + t / eps_layer);
    }
};

PlateFixture parallel_plate_fixture(double gap, const LayerSpec& layer);

// Geometry config file I/O (JSON; lengths in meters).
DesignSpec load_design_json(const std::string& path);
void save_design_json(const DesignSpec& design, const std::string& path);

} // namespace qloss

#endif
