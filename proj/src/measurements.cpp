#include "qloss/measurements.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "qloss/common.hpp"
#include "qloss/geometry.hpp"

namespace qloss {

double q_from_t1(double frequency_hz, double t1_s) {
    if (!(frequency_hz > 0.0)) throw std::invalid_argument("frequency must be positive");
    if (!(t1_s > 0.0)) throw std::invalid_argument("T1 must be positive");
    return 2.0 * pi * frequency_hz * t1_s;
}

T1Stats aggregate(const std::vector<double>& samples) {
    if (samples.empty()) throw std::invalid_argument("empty T1 trace");
    for (double s : samples)
        if (!(s > 0.0)) throw std::invalid_argument("T1 samples must be positive");

    T1Stats st;
    const size_t n = samples.size();
    double sum = 0.0;
    for (double s : samples) sum += s;
    st.mean = sum / static_cast<double>(n);
    if (n < 2) {
        st.low_count = true;
        st.std = 0.0;
    } else {
        double ss = 0.0;
        for (double s : samples) ss += (s - st.mean) * (s - st.mean);
        st.std = std::sqrt(ss / static_cast<double>(n - 1));
    }

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    double lo = sorted.front(), hi = sorted.back();
    if (hi == lo) {
        st.histogram.edges = {lo, lo == 0.0 ? 1.0 : lo * (1.0 + 1e-12)};
        st.histogram.counts = {static_cast<int>(n)};
        return st;
    }
    auto quant = [&](double q) {
        double pos = q * (static_cast<double>(n) - 1.0);
        size_t i = static_cast<size_t>(pos);
        size_t j = std::min(i + 1, n - 1);
        double f = pos - static_cast<double>(i);
        return sorted[i] * (1.0 - f) + sorted[j] * f;
    };
    double iqr = quant(0.75) - quant(0.25);
    double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
    int bins = (width > 0.0) ? static_cast<int>(std::ceil((hi - lo) / width)) : 5;
    bins = std::max(bins, 5);
    st.histogram.edges.resize(static_cast<size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        st.histogram.edges[static_cast<size_t>(b)] = lo + (hi - lo) * b / bins;
    st.histogram.counts.assign(static_cast<size_t>(bins), 0);
    for (double s : samples) {
        int b = static_cast<int>((s - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++st.histogram.counts[static_cast<size_t>(b)];
    }
    return st;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

double parse_double(const std::string& s, const std::string& path, int lineno,
                    const std::string& what) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed " +
                                 what + " '" + s + "'");
    }
}

const std::string kSummaryHeader =
    "qubit_id,wafer,substrate,process,design,freq_GHz,t1_us_mean,t1_us_std,n_samples";
const std::string kLongHeader =
    "qubit_id,wafer,substrate,process,design,freq_GHz,timestamp_iso8601,t1_us";

} // namespace

Ensemble load_measurements_csv(const std::string& path, bool allow_custom_designs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open measurement csv: " + path);
    std::string header;
    if (!std::getline(in, header))
        throw std::runtime_error("empty measurement csv: " + path);
    while (!header.empty() && (header.back() == '\r' || header.back() == '\n'))
        header.pop_back();

    bool summary;
    if (header == kSummaryHeader) summary = true;
    else if (header == kLongHeader) summary = false;
    else throw std::runtime_error(path + ":1: unrecognized header");

    Ensemble ens;
    ens.source = path;
    std::map<std::string, size_t> by_id;
    std::map<std::string, std::vector<std::pair<std::string, double>>> long_samples;

    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
            line.pop_back();
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        size_t expect = summary ? 9 : 8;
        if (f.size() != expect)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected " + std::to_string(expect) + " columns");

        QubitMeasurement m;
        m.qubit_id = f[0];
        m.wafer = f[1];
        m.substrate = f[2];
        m.process = f[3];
        m.design = f[4];
        m.frequency = parse_double(f[5], path, lineno, "freq_GHz") * 1e9;
        if (!(m.frequency > 0.0))
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": frequency must be positive");
        if (!allow_custom_designs && !is_reference_design(m.design))
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": unknown design '" + m.design + "'");

        if (summary) {
            if (by_id.count(m.qubit_id))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": duplicate qubit_id '" + m.qubit_id + "'");
            m.t1_mean = parse_double(f[6], path, lineno, "t1_us_mean") * 1e-6;
            m.t1_std = parse_double(f[7], path, lineno, "t1_us_std") * 1e-6;
            double ns = parse_double(f[8], path, lineno, "n_samples");
            m.n_samples = static_cast<int>(ns);
            if (!(m.t1_mean > 0.0))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": t1_us_mean must be positive");
            if (m.t1_std < 0.0 || m.n_samples < 1)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": bad t1_us_std or n_samples");
            m.Q = q_from_t1(m.frequency, m.t1_mean);
            by_id[m.qubit_id] = ens.devices.size();
            ens.devices.push_back(std::move(m));
        } else {
            double t1 = parse_double(f[7], path, lineno, "t1_us") * 1e-6;
            if (!(t1 > 0.0))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": t1_us must be positive");
            auto it = by_id.find(m.qubit_id);
            if (it == by_id.end()) {
                by_id[m.qubit_id] = ens.devices.size();
                ens.devices.push_back(m);
            } else {
                const QubitMeasurement& prev = ens.devices[it->second];
                if (prev.design != m.design || prev.wafer != m.wafer ||
                    prev.frequency != m.frequency)
                    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                             ": inconsistent metadata for qubit_id '" +
                                             m.qubit_id + "'");
            }
            long_samples[m.qubit_id].emplace_back(f[6], t1);
        }
    }

    if (!summary) {
        for (auto& dev : ens.devices) {
            auto& samples = long_samples[dev.qubit_id];
            dev.t1_samples = samples;
            std::vector<double> vals;
            vals.reserve(samples.size());
            for (const auto& [ts, v] : samples) vals.push_back(v);
            T1Stats st = aggregate(vals);
            dev.t1_mean = st.mean;
            dev.t1_std = st.std;
            dev.n_samples = static_cast<int>(vals.size());
            dev.Q = q_from_t1(dev.frequency, dev.t1_mean);
        }
    }
    return ens;
}

void save_measurements_csv(const Ensemble& ens, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write measurement csv: " + path);
    out << kSummaryHeader << "\n";
    char buf[512];
    for (const auto& m : ens.devices) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%.17g,%.17g,%.17g,%d\n",
                      m.qubit_id.c_str(), m.wafer.c_str(), m.substrate.c_str(),
                      m.process.c_str(), m.design.c_str(), m.frequency / 1e9,
                      m.t1_mean * 1e6, m.t1_std * 1e6, m.n_samples);
        out << buf;
    }
}

Ensemble synthesize(const std::vector<SensitivityVector>& designs,
                    const SynthesisTruth& truth, double sigma, int n_per_design,
                    std::uint64_t seed, double frequency_hz, int n_wafers) {
    if (sigma < 0.0) throw std::invalid_argument("sigma must be nonnegative");
    if (n_per_design < 1) throw std::invalid_argument("need at least one device per design");
    if (!(frequency_hz > 0.0)) throw std::invalid_argument("frequency must be positive");
    if (n_wafers < 1) throw std::invalid_argument("need at least one wafer label");

    LossFit truth_fit;
    truth_fit.model = truth.model;
    truth_fit.x = truth.x;
    truth_fit.bulk = truth.bulk;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double omega = 2.0 * pi * frequency_hz;

    Ensemble ens;
    ens.source = "synthesized";
    int device_counter = 0;
    for (const auto& d : designs) {
        Prediction p = predict(truth_fit, d, omega);
        if (p.unbounded)
            throw std::invalid_argument("truth model predicts zero loss for design " +
                                        d.design);
        for (int i = 0; i < n_per_design; ++i) {
            double z = (sigma > 0.0) ? normal(rng) : 0.0;
            double q = p.Q * std::exp(sigma * z);
            QubitMeasurement m;
            m.qubit_id = "synth-" + std::to_string(device_counter);
            m.wafer = "W" + std::to_string(device_counter % n_wafers);
            m.substrate = "synthetic";
            m.process = "synthetic";
            m.design = d.design;
            m.frequency = frequency_hz;
            m.t1_mean = q / omega;
            m.t1_std = 0.0;
            m.n_samples = 1;
            m.Q = q;
            ens.devices.push_back(std::move(m));
            ++device_counter;
        }
    }
    return ens;
}

std::vector<FitPoint> to_fit_points(const Ensemble& ens,
                                    const std::vector<SensitivityVector>& sens) {
    std::map<std::string, const SensitivityVector*> by_name;
    for (const auto& s : sens) by_name[s.design] = &s;

    std::set<std::string> missing;
    std::vector<FitPoint> pts;
    for (const auto& dev : ens.devices) {
        auto it = by_name.find(dev.design);
        if (it == by_name.end()) {
            missing.insert(dev.design);
            continue;
        }
        FitPoint p;
        p.r = *it->second;
        p.Q = dev.Q;
        pts.push_back(std::move(p));
    }
    if (!missing.empty()) {
        std::string msg = "designs with no sensitivity entry:";
        for (const auto& d : missing) msg += " " + d;
        throw std::runtime_error(msg);
    }
    if (pts.empty()) {
        std::string msg = "no measurements joined to sensitivities; measurement designs:";
        std::set<std::string> have;
        for (const auto& dev : ens.devices) have.insert(dev.design);
        for (const auto& d : have) msg += " " + d;
        msg += "; sensitivity designs:";
        for (const auto& s : sens) msg += " " + s.design;
        throw std::runtime_error(msg);
    }
    return pts;
}

} // namespace qloss
