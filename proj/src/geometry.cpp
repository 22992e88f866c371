#include "qloss/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace qloss {

std::string to_string(Terminal t) {
    switch (t) {
        case Terminal::Plus: return "PLUS";
        case Terminal::Minus: return "MINUS";
        case Terminal::Ground: return "GROUND";
        case Terminal::Floating: return "FLOATING";
    }
    throw std::logic_error("bad terminal");
}

Terminal terminal_from_string(const std::string& s) {
    if (s == "PLUS") return Terminal::Plus;
    if (s == "MINUS") return Terminal::Minus;
    if (s == "GROUND") return Terminal::Ground;
    if (s == "FLOATING") return Terminal::Floating;
    throw std::invalid_argument("unknown terminal: " + s);
}

std::string to_string(Interface i) {
    switch (i) {
        case Interface::SM: return "SM";
        case Interface::SV: return "SV";
        case Interface::MV: return "MV";
    }
    throw std::logic_error("bad interface");
}

Interface interface_from_string(const std::string& s) {
    if (s == "SM") return Interface::SM;
    if (s == "SV") return Interface::SV;
    if (s == "MV") return Interface::MV;
    throw std::invalid_argument("unknown interface: " + s);
}

double CrossSection::pattern_min() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& c : conductors) m = std::min(m, c.x_min);
    return m;
}

double CrossSection::pattern_max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& c : conductors) m = std::max(m, c.x_max);
    return m;
}

double CrossSection::min_feature() const {
    std::vector<Conductor> sorted = conductors;
    std::sort(sorted.begin(), sorted.end(),
              [](const Conductor& a, const Conductor& b) { return a.x_min < b.x_min; });
    double f = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < sorted.size(); ++i) {
        f = std::min(f, sorted[i].x_max - sorted[i].x_min);
        if (i + 1 < sorted.size())
            f = std::min(f, sorted[i + 1].x_min - sorted[i].x_max);
    }
    return f;
}

ValidationReport validate(const CrossSection& section) {
    ValidationReport rep;
    auto fail = [&rep](const std::string& msg) {
        rep.ok = false;
        rep.violations.push_back(msg);
    };

    if (section.conductors.empty()) {
        fail("no conductors");
        return rep;
    }
    for (const auto& c : section.conductors) {
        if (!(c.x_min < c.x_max)) {
            std::ostringstream os;
            os << "conductor interval degenerate: [" << c.x_min << ", " << c.x_max << "]";
            fail(os.str());
        }
    }
    std::vector<Conductor> sorted = section.conductors;
    std::sort(sorted.begin(), sorted.end(),
              [](const Conductor& a, const Conductor& b) { return a.x_min < b.x_min; });
    for (size_t i = 0; i + 1 < sorted.size(); ++i) {
        if (sorted[i].x_max >= sorted[i + 1].x_min) {
            std::ostringstream os;
            os << "conductors overlap near x = " << sorted[i].x_max;
            fail(os.str());
        }
    }
    if (section.substrate_eps < 1.0) fail("substrate_eps < 1");
    if (!(section.box_halfwidth > 0.0) || !(section.box_height > 0.0))
        fail("box dimensions must be positive");
    double extent = section.pattern_extent();
    if (section.box_halfwidth < 5.0 * extent)
        fail("box_halfwidth smaller than 5x the conductor pattern extent");
    bool driven = false;
    for (const auto& c : section.conductors)
        if (c.terminal != Terminal::Floating) driven = true;
    if (!driven) fail("no driven conductor");
    return rep;
}

namespace {

CrossSection two_pad_section(const std::string& name, double pad, double gap,
                             double scale) {
    CrossSection s;
    s.name = name;
    double half_gap = 0.5 * gap * scale;
    double w = pad * scale;
    s.conductors.push_back({-half_gap - w, -half_gap, Terminal::Plus});
    s.conductors.push_back({half_gap, half_gap + w, Terminal::Minus});
    double extent = 2.0 * w + 2.0 * half_gap;
    s.box_halfwidth = 5.0 * extent;
    s.box_height = 5.0 * extent;
    return s;
}

} // namespace

bool is_reference_design(const std::string& name) {
    return name == "Hero" || name == "ExtendedHero" || name == "Guard" ||
           name == "Skeleton";
}

DesignSpec reference_design(const std::string& name, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
    if (!is_reference_design(name))
        throw std::invalid_argument("unknown reference design: " + name);

    DesignSpec d;
    d.name = name;
    CrossSection s;
    if (name == "Hero") {
        s = two_pad_section(name, 350e-6, 350e-6, scale);
    } else if (name == "ExtendedHero") {
        s = two_pad_section(name, 700e-6, 700e-6, scale);
    } else if (name == "Guard") {
        s = two_pad_section(name, 350e-6, 20e-6, scale);
    } else { // Skeleton: Hero pads plus floating bones in the gap
        s = two_pad_section(name, 350e-6, 350e-6, scale);
        const int n_bones = 7;
        const double pitch = 20e-6 * scale;
        const double width = 10e-6 * scale;
        for (int i = 0; i < n_bones; ++i) {
            double center = (i - (n_bones - 1) / 2.0) * pitch;
            s.conductors.push_back(
                {center - 0.5 * width, center + 0.5 * width, Terminal::Floating});
        }
        std::sort(s.conductors.begin(), s.conductors.end(),
                  [](const Conductor& a, const Conductor& b) { return a.x_min < b.x_min; });
    }
    d.sections.emplace_back(std::move(s), 1.0);
    return d;
}

PlateFixture parallel_plate_fixture(double gap, const LayerSpec& layer) {
    if (!(layer.thickness < gap))
        throw std::invalid_argument("layer thickness must be smaller than the gap");
    return PlateFixture{gap, layer.thickness, layer.eps_layer};
}

DesignSpec load_design_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open geometry file: " + path);
    nlohmann::json j;
    in >> j;

    DesignSpec d;
    d.name = j.at("name").get<std::string>();
    double eps = j.at("substrate_eps").get<double>();
    auto box = j.at("box");
    double halfwidth = box.at(0).get<double>();
    double height = box.at(1).get<double>();

    for (const auto& js : j.at("sections")) {
        CrossSection s;
        s.name = d.name;
        s.substrate_eps = eps;
        s.box_halfwidth = halfwidth;
        s.box_height = height;
        for (const auto& jc : js.at("conductors")) {
            Conductor c;
            c.x_min = jc.at("x_min_m").get<double>();
            c.x_max = jc.at("x_max_m").get<double>();
            c.terminal = terminal_from_string(jc.at("terminal").get<std::string>());
            s.conductors.push_back(c);
        }
        double w = js.at("weight_m").get<double>();
        if (!(w > 0.0)) throw std::runtime_error("section weight must be positive");
        d.sections.emplace_back(std::move(s), w);
    }
    if (d.sections.empty()) throw std::runtime_error("design has no sections");
    return d;
}

void save_design_json(const DesignSpec& design, const std::string& path) {
    if (design.sections.empty()) throw std::invalid_argument("design has no sections");
    const CrossSection& first = design.sections.front().first;
    nlohmann::json j;
    j["name"] = design.name;
    j["substrate_eps"] = first.substrate_eps;
    j["box"] = {first.box_halfwidth, first.box_height};
    j["sections"] = nlohmann::json::array();
    for (const auto& [s, w] : design.sections) {
        nlohmann::json js;
        js["weight_m"] = w;
        js["conductors"] = nlohmann::json::array();
        for (const auto& c : s.conductors) {
            js["conductors"].push_back({{"x_min_m", c.x_min},
                                        {"x_max_m", c.x_max},
                                        {"terminal", to_string(c.terminal)}});
        }
        j["sections"].push_back(std::move(js));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write geometry file: " + path);
    out << j.dump(2) << "\n";
}

} // namespace qloss
