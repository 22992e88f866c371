#include "qloss/lossfit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

namespace qloss {

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                     double tol, int max_iter) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    if (y.size() != m) throw std::invalid_argument("nnls: size mismatch");
    if (max_iter <= 0) max_iter = 3 * n + 30;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(n, false);
    Eigen::VectorXd w(n);

    double gscale = (A.transpose() * y).cwiseAbs().maxCoeff();
    if (gscale == 0.0) gscale = 1.0;

    auto solve_passive = [&](const std::vector<bool>& p) {
        std::vector<int> idx;
        for (int j = 0; j < n; ++j)
            if (p[j]) idx.push_back(j);
        Eigen::MatrixXd Ap(m, idx.size());
        for (size_t k = 0; k < idx.size(); ++k) Ap.col(k) = A.col(idx[k]);
        Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(y);
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
        for (size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[k];
        return z;
    };

    for (int outer = 0; outer < max_iter; ++outer) {
        w = A.transpose() * (y - A * x);
        int best = -1;
        double best_w = tol * gscale;
        for (int j = 0; j < n; ++j) {
            if (!passive[j] && w[j] > best_w) {
                best_w = w[j];
                best = j;
            }
        }
        if (best < 0) break; // KKT satisfied
        passive[best] = true;

        Eigen::VectorXd z = solve_passive(passive);
        int inner_guard = 10 * n + 10;
        while (inner_guard-- > 0) {
            bool feasible = true;
            for (int j = 0; j < n; ++j)
                if (passive[j] && z[j] <= 0.0) feasible = false;
            if (feasible) break;
            double alpha = 1.0;
            for (int j = 0; j < n; ++j) {
                if (passive[j] && z[j] <= 0.0) {
                    double a = x[j] / (x[j] - z[j]);
                    alpha = std::min(alpha, a);
                }
            }
            x += alpha * (z - x);
            for (int j = 0; j < n; ++j) {
                if (passive[j] && x[j] <= tol * std::max(1.0, x.cwiseAbs().maxCoeff())) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            z = solve_passive(passive);
        }
        x = z;
        for (int j = 0; j < n; ++j)
            if (x[j] < 0.0) x[j] = 0.0;
    }
    return x;
}

namespace {

std::string column_name(const LossModel& model, int j) {
    if (j < static_cast<int>(model.channels.size()))
        return to_string(model.channels[static_cast<size_t>(j)]);
    return "bulk";
}

void build_system(const std::vector<FitPoint>& pts, const LossModel& model,
                  Eigen::MatrixXd* A, Eigen::VectorXd* y, Eigen::VectorXd* w) {
    const int m = static_cast<int>(pts.size());
    const int p = model.n_params();
    A->resize(m, p);
    y->resize(m);
    w->resize(m);
    for (int i = 0; i < m; ++i) {
        const FitPoint& pt = pts[static_cast<size_t>(i)];
        if (!(pt.Q > 0.0)) throw std::invalid_argument("measured Q must be positive");
        for (size_t c = 0; c < model.channels.size(); ++c)
            (*A)(i, static_cast<int>(c)) = pt.r.channel(model.channels[c]);
        if (model.include_bulk) (*A)(i, p - 1) = 1.0;
        (*y)[i] = 1.0 / pt.Q;
        (*w)[i] = (pt.weight > 0.0) ? pt.weight : pt.Q * pt.Q;
    }
}

IdentifiabilityReport identifiability_impl(const Eigen::MatrixXd& A,
                                           const Eigen::VectorXd& w,
                                           const LossModel& model) {
    IdentifiabilityReport rep;
    const int p = static_cast<int>(A.cols());
    for (int i = 0; i < p; ++i) {
        for (int j = i + 1; j < p; ++j) {
            double na = A.col(i).norm(), nb = A.col(j).norm();
            double c = (na > 0.0 && nb > 0.0)
                           ? std::abs(A.col(i).dot(A.col(j))) / (na * nb)
                           : 0.0;
            IdentifiabilityReport::Pair pr;
            pr.a = column_name(model, i);
            pr.b = column_name(model, j);
            pr.correlation = c;
            pr.unresolvable = c > 0.98;
            rep.any_unresolvable |= pr.unresolvable;
            rep.pairs.push_back(std::move(pr));
        }
    }
    Eigen::MatrixXd Aw = w.cwiseSqrt().asDiagonal() * A;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Aw);
    double smin = svd.singularValues().tail(1)(0);
    double smax = svd.singularValues()(0);
    rep.condition_number =
        (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
    return rep;
}

LossFit fit_impl(const std::vector<FitPoint>& pts, const LossModel& model,
                 bool with_diagnostics) {
    if (model.n_params() == 0)
        throw std::invalid_argument("loss model has no parameters");
    const int m = static_cast<int>(pts.size());
    const int p = model.n_params();
    if (m < p) throw std::invalid_argument("underdetermined: fewer measurements than parameters");

    Eigen::MatrixXd A;
    Eigen::VectorXd y, w;
    build_system(pts, model, &A, &y, &w);
    for (size_t c = 0; c < model.channels.size(); ++c) {
        if (A.col(static_cast<int>(c)).cwiseAbs().maxCoeff() == 0.0)
            throw std::invalid_argument("all-zero sensitivity column for channel " +
                                        to_string(model.channels[c]));
    }

    Eigen::VectorXd sw = w.cwiseSqrt();
    Eigen::MatrixXd Aw = sw.asDiagonal() * A;
    Eigen::VectorXd yw = sw.cwiseProduct(y);
    Eigen::VectorXd theta = nnls(Aw, yw);

    LossFit f;
    f.model = model;
    f.x = theta.head(static_cast<int>(model.channels.size()));
    f.bulk = model.include_bulk ? theta[p - 1] : 0.0;
    f.residuals = Aw * theta - yw;
    f.residual_norm = f.residuals.norm();

    if (with_diagnostics) {
        // covariance from the unconstrained active set
        std::vector<int> act;
        for (int j = 0; j < p; ++j)
            if (theta[j] > 0.0) act.push_back(j);
        f.covariance = Eigen::MatrixXd::Zero(p, p);
        if (!act.empty() && m > static_cast<int>(act.size())) {
            Eigen::MatrixXd Aa(m, act.size());
            for (size_t k = 0; k < act.size(); ++k) Aa.col(k) = Aw.col(act[k]);
            double s2 = f.residuals.squaredNorm() / (m - static_cast<int>(act.size()));
            Eigen::MatrixXd gram = Aa.transpose() * Aa;
            Eigen::MatrixXd cov = s2 * gram.inverse();
            for (size_t r = 0; r < act.size(); ++r)
                for (size_t c = 0; c < act.size(); ++c)
                    f.covariance(act[r], act[c]) = cov(r, c);
        }
        f.identifiability = identifiability_impl(A, w, model);
    }
    return f;
}

} // namespace

LossFit fit(const std::vector<FitPoint>& measurements, const LossModel& model) {
    return fit_impl(measurements, model, true);
}

Prediction predict(const LossFit& f, const SensitivityVector& design, double omega) {
    double loss = f.bulk;
    for (size_t c = 0; c < f.model.channels.size(); ++c)
        loss += f.x[static_cast<int>(c)] * design.channel(f.model.channels[c]);
    Prediction p;
    if (loss <= 0.0) {
        p.unbounded = true;
        p.Q = std::numeric_limits<double>::infinity();
        p.T1 = std::numeric_limits<double>::infinity();
        return p;
    }
    p.Q = 1.0 / loss;
    p.T1 = (omega > 0.0) ? p.Q / omega : std::numeric_limits<double>::quiet_NaN();
    return p;
}

std::vector<std::pair<double, double>> bootstrap(
    const std::vector<FitPoint>& measurements, const LossModel& model,
    int n_resamples, std::uint64_t seed, double level) {
    if (n_resamples < 100)
        throw std::invalid_argument("bootstrap needs at least 100 resamples");
    const size_t m = measurements.size();
    if (m < 5)
        throw std::invalid_argument("too few devices to resample meaningfully (< 5)");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("confidence level must be in (0, 1)");

    // Pre-generate all indices sequentially for order-independent determinism.
    std::mt19937_64 rng(seed);
    std::vector<std::vector<size_t>> draws(static_cast<size_t>(n_resamples));
    for (auto& d : draws) {
        d.resize(m);
        for (auto& ix : d) ix = static_cast<size_t>(rng() % m);
    }

    const int p = model.n_params();
    std::vector<std::vector<double>> samples(static_cast<size_t>(p));
    for (const auto& d : draws) {
        std::vector<FitPoint> pts;
        pts.reserve(m);
        for (size_t ix : d) pts.push_back(measurements[ix]);
        LossFit f;
        try {
            f = fit_impl(pts, model, false);
        } catch (const std::exception&) {
            continue; // degenerate resample
        }
        for (int j = 0; j < p; ++j) {
            double v = (j < static_cast<int>(model.channels.size())) ? f.x[j] : f.bulk;
            samples[static_cast<size_t>(j)].push_back(v);
        }
    }

    auto quantile = [](std::vector<double> v, double q) {
        std::sort(v.begin(), v.end());
        if (v.empty()) return 0.0;
        double pos = q * (static_cast<double>(v.size()) - 1.0);
        size_t lo = static_cast<size_t>(std::floor(pos));
        size_t hi = std::min(lo + 1, v.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };

    double alpha = 0.5 * (1.0 - level);
    std::vector<std::pair<double, double>> ci;
    for (int j = 0; j < p; ++j)
        ci.emplace_back(quantile(samples[static_cast<size_t>(j)], alpha),
                        quantile(samples[static_cast<size_t>(j)], 1.0 - alpha));
    return ci;
}

IdentifiabilityReport identifiability(const std::vector<FitPoint>& measurements,
                                      const LossModel& model) {
    if (measurements.size() < 2)
        throw std::invalid_argument("identifiability needs at least 2 designs");
    Eigen::MatrixXd A;
    Eigen::VectorXd y, w;
    build_system(measurements, model, &A, &y, &w);
    return identifiability_impl(A, w, model);
}

namespace {

Eigen::MatrixXd selection_matrix(const std::vector<SensitivityVector>& cand,
                                 const std::vector<int>& subset) {
    Eigen::MatrixXd A(subset.size(), 4);
    for (size_t i = 0; i < subset.size(); ++i) {
        const auto& v = cand[static_cast<size_t>(subset[i])];
        A(static_cast<int>(i), 0) = v.r_sm;
        A(static_cast<int>(i), 1) = v.r_sv;
        A(static_cast<int>(i), 2) = v.r_mv;
        A(static_cast<int>(i), 3) = 1.0;
    }
    return A;
}

double d_criterion(const std::vector<SensitivityVector>& cand,
                   const std::vector<int>& subset) {
    Eigen::MatrixXd A = selection_matrix(cand, subset);
    // column scaling so channels with different magnitudes compare fairly
    for (int j = 0; j < 4; ++j) {
        double n = A.col(j).norm();
        if (n > 0.0) A.col(j) /= n;
    }
    if (A.rows() < A.cols()) return (A * A.transpose()).determinant();
    return (A.transpose() * A).determinant();
}

} // namespace

std::vector<int> select_designs(const std::vector<SensitivityVector>& candidates,
                                int k) {
    const int n = static_cast<int>(candidates.size());
    if (k <= 0 || k > n) throw std::invalid_argument("subset size out of range");

    // name-sorted order fixes tie-breaking
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return candidates[static_cast<size_t>(a)].design <
               candidates[static_cast<size_t>(b)].design;
    });

    std::vector<int> best;
    double best_det = -1.0;
    auto consider = [&](const std::vector<int>& subset) {
        double d = d_criterion(candidates, subset);
        if (d > best_det * (1.0 + 1e-12) + 1e-300) {
            best_det = d;
            best = subset;
        }
    };

    if (n <= 20) {
        std::vector<int> stack;
        // iterate combinations of `order` positions in lexicographic order
        std::function<void(int, int)> rec = [&](int start, int depth) {
            if (depth == k) {
                std::vector<int> subset;
                for (int pos : stack) subset.push_back(order[static_cast<size_t>(pos)]);
                consider(subset);
                return;
            }
            for (int i = start; i <= n - (k - depth); ++i) {
                stack.push_back(i);
                rec(i + 1, depth + 1);
                stack.pop_back();
            }
        };
        rec(0, 0);
    } else {
        // greedy forward selection then exchange passes
        std::vector<int> subset;
        std::vector<bool> used(static_cast<size_t>(n), false);
        for (int step = 0; step < k; ++step) {
            int pick = -1;
            double pick_det = -1.0;
            for (int pos = 0; pos < n; ++pos) {
                int c = order[static_cast<size_t>(pos)];
                if (used[static_cast<size_t>(c)]) continue;
                subset.push_back(c);
                double d = d_criterion(candidates, subset);
                subset.pop_back();
                if (d > pick_det * (1.0 + 1e-12) + 1e-300) {
                    pick_det = d;
                    pick = c;
                }
            }
            subset.push_back(pick);
            used[static_cast<size_t>(pick)] = true;
        }
        bool improved = true;
        double cur = d_criterion(candidates, subset);
        while (improved) {
            improved = false;
            for (size_t i = 0; i < subset.size() && !improved; ++i) {
                for (int pos = 0; pos < n && !improved; ++pos) {
                    int c = order[static_cast<size_t>(pos)];
                    if (used[static_cast<size_t>(c)]) continue;
                    int old = subset[i];
                    subset[i] = c;
                    double d = d_criterion(candidates, subset);
                    if (d > cur * (1.0 + 1e-12) + 1e-300) {
                        used[static_cast<size_t>(old)] = false;
                        used[static_cast<size_t>(c)] = true;
                        cur = d;
                        improved = true;
                    } else {
                        subset[i] = old;
                    }
                }
            }
        }
        best = subset;
    }
    std::sort(best.begin(), best.end());
    return best;
}

double selection_condition_number(const std::vector<SensitivityVector>& candidates,
                                  const std::vector<int>& subset) {
    Eigen::MatrixXd A = selection_matrix(candidates, subset);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& s = svd.singularValues();
    double smin = s(s.size() - 1);
    return (smin > 0.0) ? s(0) / smin : std::numeric_limits<double>::infinity();
}

void save_fit_report_json(const LossFit& f, const std::vector<FitPoint>& points,
                          const std::string& path) {
    nlohmann::json j;
    j["model"]["channels"] = nlohmann::json::array();
    for (auto c : f.model.channels) j["model"]["channels"].push_back(to_string(c));
    j["model"]["include_bulk"] = f.model.include_bulk;

    j["parameters"] = nlohmann::json::object();
    for (size_t c = 0; c < f.model.channels.size(); ++c)
        j["parameters"]["x_" + to_string(f.model.channels[c]) + "_m"] =
            f.x[static_cast<int>(c)];
    j["parameters"]["inv_q_bulk"] = f.bulk;
    j["parameters"]["q_bulk"] =
        (f.bulk > 0.0) ? nlohmann::json(1.0 / f.bulk) : nlohmann::json();

    if (!f.ci.empty()) {
        j["confidence_intervals"]["level"] = f.ci_level;
        auto arr = nlohmann::json::array();
        for (size_t p = 0; p < f.ci.size(); ++p) {
            std::string name = (p < f.model.channels.size())
                                   ? "x_" + to_string(f.model.channels[p]) + "_m"
                                   : "inv_q_bulk";
            arr.push_back({{"parameter", name}, {"lo", f.ci[p].first},
                           {"hi", f.ci[p].second}});
        }
        j["confidence_intervals"]["intervals"] = std::move(arr);
    }

    j["identifiability"]["condition_number"] =
        std::isfinite(f.identifiability.condition_number)
            ? nlohmann::json(f.identifiability.condition_number)
            : nlohmann::json("inf");
    auto pairs = nlohmann::json::array();
    for (const auto& p : f.identifiability.pairs)
        pairs.push_back({{"a", p.a}, {"b", p.b}, {"correlation", p.correlation},
                         {"unresolvable", p.unresolvable}});
    j["identifiability"]["pairs"] = std::move(pairs);
    j["identifiability"]["any_unresolvable"] = f.identifiability.any_unresolvable;

    j["residual_norm"] = f.residual_norm;
    auto res = nlohmann::json::array();
    for (size_t i = 0; i < points.size(); ++i) {
        Prediction pr = predict(f, points[i].r, 1.0);
        res.push_back({{"design", points[i].r.design},
                       {"q_measured", points[i].Q},
                       {"q_predicted", pr.unbounded ? nlohmann::json("inf")
                                                    : nlohmann::json(pr.Q)},
                       {"weighted_residual",
                        (i < static_cast<size_t>(f.residuals.size()))
                            ? f.residuals[static_cast<Eigen::Index>(i)]
                            : 0.0}});
    }
    j["per_device"] = std::move(res);

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write fit report: " + path);
    out << j.dump(2) << "\n";
}

void save_plot_csv(const LossFit& f, Interface channel, const std::string& path,
                   double inv_r_min, double inv_r_max, int n_points) {
    double x_ch = 0.0;
    for (size_t c = 0; c < f.model.channels.size(); ++c)
        if (f.model.channels[c] == channel) x_ch = f.x[static_cast<int>(c)];

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write plot csv: " + path);
    out << "inv_r_m,Q_model,Q_surface_only,Q_background\n";
    char buf[256];
    double lmin = std::log10(inv_r_min), lmax = std::log10(inv_r_max);
    for (int i = 0; i < n_points; ++i) {
        double inv_r = std::pow(10.0, lmin + (lmax - lmin) * i / (n_points - 1));
        double r = 1.0 / inv_r;
        double loss_surf = x_ch * r;
        double q_model = 1.0 / (loss_surf + f.bulk);
        double q_surf = (loss_surf > 0.0) ? 1.0 / loss_surf
                                          : std::numeric_limits<double>::infinity();
        double q_bg = (f.bulk > 0.0) ? 1.0 / f.bulk
                                     : std::numeric_limits<double>::infinity();
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g\n", inv_r, q_model,
                      q_surf, q_bg);
        out << buf;
    }
}

} // namespace qloss
