#ifndef QLOSS_MEASUREMENTS_HPP
#define QLOSS_MEASUREMENTS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "qloss/lossfit.hpp"
#include "qloss/participation.hpp"

namespace qloss {

double q_from_t1(double frequency_hz, double t1_s);

struct Histogram {
    std::vector<double> edges; // size = counts.size() + 1
    std::vector<int> counts;
};

struct T1Stats {
    double mean = 0.0; // seconds
    double std = 0.0;  // sample standard deviation, 0 for a single sample
    Histogram histogram;
    bool low_count = false; // fewer than 2 samples
};

// Arithmetic mean, sample std and a Freedman-Diaconis histogram
// (at least 5 bins; a constant trace collapses to one bin).
T1Stats aggregate(const std::vector<double>& t1_samples);

struct QubitMeasurement {
    std::string qubit_id;
    std::string wafer;
    std::string substrate; // EFG, HEM, other
    std::string process;   // e.g. acetone, glacial-acetic
    std::string design;
    double frequency = 0.0; // Hz
    std::vector<std::pair<std::string, double>> t1_samples; // (timestamp, s)
    double t1_mean = 0.0; // s
    double t1_std = 0.0;  // s
    int n_samples = 0;
    double Q = 0.0;
};

struct Ensemble {
    std::vector<QubitMeasurement> devices;
    std::string source;
};

// Measurement CSV, summary schema:
//   qubit_id,wafer,substrate,process,design,freq_GHz,t1_us_mean,t1_us_std,n_samples
// or long schema (one row per T1 sample, aggregated on load):
//   qubit_id,wafer,substrate,process,design,freq_GHz,timestamp_iso8601,t1_us
Ensemble load_measurements_csv(const std::string& path, bool allow_custom_designs = true);
void save_measurements_csv(const Ensemble& ensemble, const std::string& path);

// Synthetic ensemble: Q drawn lognormally around the model prediction.
// T1 is back-computed at each design's configured frequency.
struct SynthesisTruth {
    LossModel model;
    Eigen::VectorXd x;  // per channel (m)
    double bulk = 0.0;  // 1/Q_bulk
};

Ensemble synthesize(const std::vector<SensitivityVector>& designs,
                    const SynthesisTruth& truth, double sigma, int n_per_design,
                    std::uint64_t seed, double frequency_hz, int n_wafers = 6);

std::vector<FitPoint> to_fit_points(const Ensemble& ensemble,
                                    const std::vector<SensitivityVector>& sensitivities);

} // namespace qloss

#endif
