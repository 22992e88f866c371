#ifndef QLOSS_LOSSFIT_HPP
#define QLOSS_LOSSFIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qloss/participation.hpp"

namespace qloss {

// Nonnegative least squares min ||A x - y||_2 s.t. x >= 0 by the
// Lawson-Hanson active-set method.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                     double tol = 1e-12, int max_iter = 0);

struct LossModel {
    std::vector<Interface> channels{Interface::SV};
    bool include_bulk = true;

    int n_params() const {
        return static_cast<int>(channels.size()) + (include_bulk ? 1 : 0);
    }
};

struct FitPoint {
    SensitivityVector r;
    double Q = 0.0;
    double weight = 0.0; // <= 0 means the default Q^2
};

struct IdentifiabilityReport {
    // pairwise |cosine| similarities between design-matrix columns,
    // labelled by column name ("SM", "SV", "MV", "bulk")
    struct Pair {
        std::string a, b;
        double correlation = 0.0;
        bool unresolvable = false; // correlation > 0.98
    };
    std::vector<Pair> pairs;
    double condition_number = 1.0; // of the weighted design matrix
    bool any_unresolvable = false;
};

struct LossFit {
    LossModel model;
    Eigen::VectorXd x;          // per-channel loss product t*tan(delta) (m)
    double bulk = 0.0;          // 1/Q_bulk
    Eigen::VectorXd residuals;  // weighted residuals on 1/Q
    double residual_norm = 0.0;
    Eigen::MatrixXd covariance; // of [x..., bulk] from the active set
    std::vector<std::pair<double, double>> ci; // per parameter, empty if no bootstrap
    double ci_level = 0.0;
    IdentifiabilityReport identifiability;
};

LossFit fit(const std::vector<FitPoint>& measurements, const LossModel& model);

struct Prediction {
    double Q = 0.0;
    double T1 = 0.0;
    bool unbounded = false; // zero total loss
};

Prediction predict(const LossFit& f, const SensitivityVector& design,
                   double omega);

// Case-resampling bootstrap over devices; percentile intervals at `level`
// (e.g. 0.9). Deterministic for a given seed.
std::vector<std::pair<double, double>> bootstrap(
    const std::vector<FitPoint>& measurements, const LossModel& model,
    int n_resamples, std::uint64_t seed, double level = 0.9);

IdentifiabilityReport identifiability(const std::vector<FitPoint>& measurements,
                                      const LossModel& model);

// D-optimal k-subset of candidate designs: maximizes det(A^T A) of the
// sensitivity matrix augmented with the bulk column. Exhaustive for up to
// 20 candidates, greedy exchange beyond; ties broken by design name.
std::vector<int> select_designs(const std::vector<SensitivityVector>& candidates,
                                int k);

double selection_condition_number(const std::vector<SensitivityVector>& candidates,
                                  const std::vector<int>& subset);

// Fit report JSON and Q-vs-1/r plot data CSV (columns inv_r_m, Q_model,
// Q_surface_only, Q_background).
void save_fit_report_json(const LossFit& f, const std::vector<FitPoint>& points,
                          const std::string& path);
void save_plot_csv(const LossFit& f, Interface channel, const std::string& path,
                   double inv_r_min = 1e-8, double inv_r_max = 1e-2,
                   int n_points = 200);

} // namespace qloss

#endif
