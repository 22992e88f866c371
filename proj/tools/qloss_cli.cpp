#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qloss/common.hpp"
#include "qloss/fieldsolver.hpp"
#include "qloss/geometry.hpp"
#include "qloss/lossfit.hpp"
#include "qloss/measurements.hpp"
#include "qloss/participation.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct GlobalOpts {
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    int levels = 3;
    double layer_t_nm = 3.0;
    double layer_eps = 6.2;
    std::vector<std::string> channels{"SV"};
    bool no_bulk = false;
    bool force = false;
    bool quiet = false;
};

qloss::LossModel make_model(const GlobalOpts& g) {
    qloss::LossModel model;
    model.channels.clear();
    for (const auto& c : g.channels)
        model.channels.push_back(qloss::interface_from_string(c));
    model.include_bulk = !g.no_bulk;
    return model;
}

void ensure_out_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("output directory not writable: " + dir);
}

void info(const GlobalOpts& g, const std::string& msg) {
    if (!g.quiet) std::cout << msg << "\n";
}

int cmd_participation(const GlobalOpts& g, const std::vector<std::string>& geo_files) {
    ensure_out_dir(g.out_dir);
    double t = g.layer_t_nm * 1e-9;

    std::vector<qloss::SensitivityVector> rows;
    bool all_reliable = true;
    for (const auto& path : geo_files) {
        qloss::DesignSpec design = qloss::load_design_json(path);
        for (const auto& [section, w] : design.sections) {
            (void)w;
            auto rep = qloss::validate(section);
            if (!rep.ok) {
                std::string msg = path + ": invalid geometry:";
                for (const auto& v : rep.violations) msg += " " + v + ";";
                throw std::runtime_error(msg);
            }
        }
        auto v = qloss::compute_design_sensitivity(design, t, g.layer_eps, 0, g.levels);
        if (g.levels < 3)
            info(g, "warning: fewer than 3 levels, no extrapolation error bars for " +
                        design.name);
        if (!v.reliable && g.levels >= 3) {
            all_reliable = false;
            info(g, "warning: unreliable extrapolation for " + design.name);
        }
        rows.push_back(std::move(v));
    }

    std::string out = g.out_dir + "/sensitivity.csv";
    qloss::save_sensitivity_csv(rows, out);
    info(g, "wrote " + out);
    if (!all_reliable && !g.force) {
        std::cerr << "error: unreliable extrapolation (rerun with --force to accept)\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_fit(const GlobalOpts& g, const std::string& meas_path,
            const std::string& sens_path, int n_resamples) {
    ensure_out_dir(g.out_dir);
    qloss::Ensemble ens = qloss::load_measurements_csv(meas_path);
    auto sens = qloss::load_sensitivity_csv(sens_path);
    auto pts = qloss::to_fit_points(ens, sens);
    qloss::LossModel model = make_model(g);

    qloss::LossFit f = qloss::fit(pts, model);
    if (pts.size() >= 5 && n_resamples >= 100) {
        f.ci = qloss::bootstrap(pts, model, n_resamples, g.seed);
        f.ci_level = 0.9;
    } else {
        info(g, "warning: skipping bootstrap (too few devices or resamples)");
    }

    std::string report = g.out_dir + "/fit_report.json";
    qloss::save_fit_report_json(f, pts, report);
    qloss::Interface plot_channel =
        model.channels.empty() ? qloss::Interface::SV : model.channels.front();
    std::string plot = g.out_dir + "/plot_q_vs_inv_r.csv";
    qloss::save_plot_csv(f, plot_channel, plot);
    info(g, "wrote " + report);
    info(g, "wrote " + plot);
    return kExitOk;
}

int cmd_synth(const GlobalOpts& g, const std::string& sens_path, double x_sm,
              double x_sv, double x_mv, double q_bulk, double sigma, int n_per_design,
              double freq_ghz) {
    ensure_out_dir(g.out_dir);
    auto sens = qloss::load_sensitivity_csv(sens_path);
    if (sens.empty()) throw std::runtime_error("no designs in " + sens_path);

    qloss::SynthesisTruth truth;
    truth.model.channels = {qloss::Interface::SM, qloss::Interface::SV,
                            qloss::Interface::MV};
    truth.model.include_bulk = true;
    truth.x = Eigen::Vector3d(x_sm, x_sv, x_mv);
    truth.bulk = (q_bulk > 0.0) ? 1.0 / q_bulk : 0.0;

    qloss::Ensemble ens = qloss::synthesize(sens, truth, sigma, n_per_design, g.seed,
                                            freq_ghz * 1e9);
    std::string out = g.out_dir + "/measurements.csv";
    qloss::save_measurements_csv(ens, out);
    info(g, "wrote " + out);
    return kExitOk;
}

int cmd_select(const GlobalOpts& g, const std::string& sens_path, int k) {
    auto sens = qloss::load_sensitivity_csv(sens_path);
    auto subset = qloss::select_designs(sens, k);
    double cond = qloss::selection_condition_number(sens, subset);
    std::cout << "selected:";
    for (int i : subset) std::cout << " " << sens[static_cast<size_t>(i)].design;
    std::cout << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", cond);
    std::cout << "condition_number: " << buf << "\n";
    return kExitOk;
}

int cmd_report(const GlobalOpts&, const std::string& report_path) {
    std::ifstream in(report_path);
    if (!in) throw std::runtime_error("cannot open fit report: " + report_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("malformed fit report " + report_path + ": " + e.what());
    }

    char buf[256];
    std::cout << "Loss fit summary\n";
    std::cout << "================\n";
    for (auto& [key, val] : j.at("parameters").items()) {
        if (val.is_null()) {
            std::cout << key << ": unbounded\n";
        } else {
            std::snprintf(buf, sizeof(buf), "%.6g", val.get<double>());
            std::cout << key << ": " << buf;
            if (key.rfind("x_", 0) == 0) std::cout << " m";
            std::cout << "\n";
        }
    }
    if (j.contains("confidence_intervals")) {
        double level = j["confidence_intervals"]["level"].get<double>();
        std::snprintf(buf, sizeof(buf), "%.0f%%", 100.0 * level);
        std::cout << "\n" << buf << " bootstrap confidence intervals:\n";
        for (const auto& ci : j["confidence_intervals"]["intervals"]) {
            std::snprintf(buf, sizeof(buf), "  %s: [%.6g, %.6g]",
                          ci.at("parameter").get<std::string>().c_str(),
                          ci.at("lo").get<double>(), ci.at("hi").get<double>());
            std::cout << buf << "\n";
        }
    } else {
        std::cout << "\n(point estimates only; no confidence intervals)\n";
    }

    const auto& ident = j.at("identifiability");
    std::cout << "\nIdentifiability:\n";
    if (ident.at("condition_number").is_string())
        std::cout << "  condition number: inf\n";
    else {
        std::snprintf(buf, sizeof(buf), "  condition number: %.6g",
                      ident.at("condition_number").get<double>());
        std::cout << buf << "\n";
    }
    for (const auto& p : ident.at("pairs")) {
        std::snprintf(buf, sizeof(buf), "  corr(%s, %s) = %.4f",
                      p.at("a").get<std::string>().c_str(),
                      p.at("b").get<std::string>().c_str(),
                      p.at("correlation").get<double>());
        std::cout << buf << (p.at("unresolvable").get<bool>() ? "  [unresolvable]" : "")
                  << "\n";
    }
    if (ident.at("any_unresolvable").get<bool>()) {
        std::cout << "  NOTE: these data cannot resolve which of the flagged "
                     "channels dominates the loss;\n"
                     "  the flagged sensitivity columns are too strongly "
                     "correlated across the measured designs.\n";
    }

    std::cout << "\nPer-device (measured vs predicted Q):\n";
    for (const auto& d : j.at("per_device")) {
        std::string qp = d.at("q_predicted").is_string()
                             ? "inf"
                             : [&] {
                                   char b[64];
                                   std::snprintf(b, sizeof(b), "%.4g",
                                                 d.at("q_predicted").get<double>());
                                   return std::string(b);
                               }();
        std::snprintf(buf, sizeof(buf), "  %-16s Q=%.4g  model=%s",
                      d.at("design").get<std::string>().c_str(),
                      d.at("q_measured").get<double>(), qp.c_str());
        std::cout << buf << "\n";
    }
    return kExitOk;
}

void apply_config_file(GlobalOpts& g, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    if (j.contains("out")) g.out_dir = j["out"].get<std::string>();
    if (j.contains("seed")) g.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("levels")) g.levels = j["levels"].get<int>();
    if (j.contains("layer_t_nm")) g.layer_t_nm = j["layer_t_nm"].get<double>();
    if (j.contains("layer_eps")) g.layer_eps = j["layer_eps"].get<double>();
    if (j.contains("channels")) g.channels = j["channels"].get<std::vector<std::string>>();
    if (j.contains("no_bulk")) g.no_bulk = j["no_bulk"].get<bool>();
    if (j.contains("force")) g.force = j["force"].get<bool>();
    if (j.contains("quiet")) g.quiet = j["quiet"].get<bool>();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Surface-loss participation and loss-budget fitting toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    std::string config_file;
    app.add_option("--out", g.out_dir, "Output directory");
    app.add_option("--seed", g.seed, "Random seed (default 0)");
    app.add_option("--levels", g.levels, "Number of mesh refinement levels");
    app.add_option("--layer-t", g.layer_t_nm, "Layer thickness in nm");
    app.add_option("--layer-eps", g.layer_eps, "Layer relative permittivity");
    app.add_option("--channels", g.channels, "Loss channels (SM SV MV)");
    app.add_flag("--no-bulk", g.no_bulk, "Drop the background loss term");
    app.add_flag("--force", g.force, "Accept unreliable extrapolations");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");
    app.add_option("--config", config_file, "JSON config file mirroring flags");

    auto* part = app.add_subcommand("participation",
                                    "Solve geometries and write sensitivity CSV");
    std::vector<std::string> geo_files;
    part->add_option("--geometry", geo_files, "Geometry JSON file(s)")->required();

    auto* fitc = app.add_subcommand("fit", "Fit measured Q to the loss model");
    std::string meas_path, sens_path;
    int n_resamples = 500;
    fitc->add_option("--measurements", meas_path, "Measurement CSV")->required();
    fitc->add_option("--sensitivities", sens_path, "Sensitivity CSV")->required();
    fitc->add_option("--resamples", n_resamples, "Bootstrap resamples");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic ensemble");
    std::string synth_sens;
    double x_sm = 0.0, x_sv = 1.6e-11, x_mv = 0.0, q_bulk = 3e6, sigma = 0.2;
    double freq_ghz = 5.0;
    int n_per_design = 9;
    synth->add_option("--sensitivities", synth_sens, "Sensitivity CSV")->required();
    synth->add_option("--x-sm", x_sm, "True SM loss product (m)");
    synth->add_option("--x-sv", x_sv, "True SV loss product (m)");
    synth->add_option("--x-mv", x_mv, "True MV loss product (m)");
    synth->add_option("--q-bulk", q_bulk, "True background Q (<=0 disables)");
    synth->add_option("--sigma", sigma, "Lognormal Q scatter");
    synth->add_option("--n", n_per_design, "Devices per design");
    synth->add_option("--freq-ghz", freq_ghz, "Qubit frequency (GHz)");

    auto* sel = app.add_subcommand("select", "D-optimal design subset");
    std::string sel_sens;
    int k = 0;
    sel->add_option("--sensitivities", sel_sens, "Sensitivity CSV")->required();
    sel->add_option("-k,--count", k, "Subset size")->required();

    auto* rep = app.add_subcommand("report", "Render a fit report");
    std::string report_path;
    rep->add_option("--fit-report", report_path, "fit_report.json path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (!config_file.empty()) apply_config_file(g, config_file);
        if (part->parsed()) return cmd_participation(g, geo_files);
        if (fitc->parsed()) return cmd_fit(g, meas_path, sens_path, n_resamples);
        if (synth->parsed())
            return cmd_synth(g, synth_sens, x_sm, x_sv, x_mv, q_bulk, sigma,
                             n_per_design, freq_ghz);
        if (sel->parsed()) return cmd_select(g, sel_sens, k);
        if (rep->parsed()) return cmd_report(g, report_path);
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::runtime_error& e) {
        std::string what = e.what();
        std::cerr << "error: " << what << "\n";
        bool numeric = what.find("residual") != std::string::npos ||
                       what.find("singular") != std::string::npos ||
                       what.find("solve") != std::string::npos;
        return numeric ? kExitNumeric : kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
