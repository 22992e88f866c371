#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "qloss/common.hpp"
#include "qloss/lossfit.hpp"

using namespace qloss;

namespace {

// Exhaustive oracle: the NNLS optimum is the best feasible unconstrained
// solution over all column subsets.
Eigen::VectorXd nnls_oracle(const Eigen::MatrixXd& A, const Eigen::VectorXd& y) {
    const int n = static_cast<int>(A.cols());
    Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
    double best_obj = y.squaredNorm();
    for (int mask = 1; mask < (1 << n); ++mask) {
        std::vector<int> idx;
        for (int j = 0; j < n; ++j)
            if (mask & (1 << j)) idx.push_back(j);
        Eigen::MatrixXd As(A.rows(), idx.size());
        for (size_t k = 0; k < idx.size(); ++k) As.col(k) = A.col(idx[k]);
        Eigen::VectorXd xs = As.colPivHouseholderQr().solve(y);
        bool feasible = true;
        for (int k = 0; k < xs.size(); ++k)
            if (xs[k] < 0.0) feasible = false;
        if (!feasible) continue;
        double obj = (As * xs - y).squaredNorm();
        if (obj < best_obj) {
            best_obj = obj;
            best.setZero();
            for (size_t k = 0; k < idx.size(); ++k) best[idx[k]] = xs[k];
        }
    }
    return best;
}

SensitivityVector sens(const std::string& name, double r_sv, double r_sm = 0.0,
                       double r_mv = 0.0) {
    SensitivityVector v;
    v.design = name;
    v.r_sv = r_sv;
    v.r_sm = r_sm;
    v.r_mv = r_mv;
    return v;
}

std::vector<FitPoint> model_points(const std::vector<SensitivityVector>& designs,
                                   double x_sv, double bulk) {
    std::vector<FitPoint> pts;
    for (const auto& d : designs) {
        FitPoint p;
        p.r = d;
        p.Q = 1.0 / (d.r_sv * x_sv + bulk);
        pts.push_back(p);
    }
    return pts;
}

} // namespace

TEST_CASE("nnls basics") {
    SUBCASE("identity with mixed-sign target clips negatives") {
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2);
        Eigen::VectorXd y(2);
        y << 1.0, -1.0;
        Eigen::VectorXd x = nnls(A, y);
        CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(x[1] == 0.0);
    }

    SUBCASE("overdetermined mean") {
        Eigen::MatrixXd A(2, 1);
        A << 1.0, 1.0;
        Eigen::VectorXd y(2);
        y << 1.0, 2.0;
        CHECK(nnls(A, y)[0] == doctest::Approx(1.5).epsilon(1e-12));
    }

    SUBCASE("all-negative target gives the zero vector") {
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3);
        Eigen::VectorXd y = -Eigen::VectorXd::Ones(3);
        CHECK(nnls(A, y).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("size mismatch throws") {
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3);
        Eigen::VectorXd y = Eigen::VectorXd::Ones(2);
        CHECK_THROWS_AS(nnls(A, y), std::invalid_argument);
    }
}

TEST_CASE("nnls agrees with the exhaustive oracle and satisfies KKT") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 200; ++trial) {
        int m = 2 + static_cast<int>(rng() % 7);
        int n = 1 + static_cast<int>(rng() % 3);
        Eigen::MatrixXd A(m, n);
        Eigen::VectorXd y(m);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
            y[i] = nd(rng);
        }
        Eigen::VectorXd x = nnls(A, y);
        Eigen::VectorXd xo = nnls_oracle(A, y);
        double obj = (A * x - y).squaredNorm();
        double obj_o = (A * xo - y).squaredNorm();
        CHECK(obj <= obj_o * (1.0 + 1e-9) + 1e-14);

        Eigen::VectorXd g = A.transpose() * (A * x - y);
        double scale = std::max(1.0, (A.transpose() * y).cwiseAbs().maxCoeff());
        for (int j = 0; j < n; ++j) {
            CHECK(x[j] >= 0.0);
            if (x[j] > 0.0)
                CHECK(std::abs(g[j]) <= 1e-10 * scale); // stationarity
            else
                CHECK(g[j] >= -1e-10 * scale); // dual feasibility
        }
    }
}

TEST_CASE("fit recovers noiseless parameters") {
    auto designs = {sens("A", 2e3), sens("B", 3e3), sens("C", 2e4), sens("D", 5e4)};
    double x_true = 1.6e-11, b_true = 1.0 / 3e6;
    auto pts = model_points(designs, x_true, b_true);
    LossFit f = fit(pts, LossModel{});
    CHECK(f.x[0] == doctest::Approx(x_true).epsilon(1e-6));
    CHECK(f.bulk == doctest::Approx(b_true).epsilon(1e-6));
    CHECK(f.residual_norm < 1e-8);

    SUBCASE("scaling all Q by a constant scales the parameters inversely") {
        auto scaled = pts;
        for (auto& p : scaled) p.Q *= 3.0;
        LossFit g = fit(scaled, LossModel{});
        CHECK(g.x[0] == doctest::Approx(x_true / 3.0).epsilon(1e-6));
        CHECK(g.bulk == doctest::Approx(b_true / 3.0).epsilon(1e-6));
    }

    SUBCASE("duplicating a point equals doubling its weight") {
        auto dup = pts;
        dup.push_back(pts[2]);
        auto wt = pts;
        wt[2].weight = 2.0 * pts[2].Q * pts[2].Q;
        LossFit fd = fit(dup, LossModel{});
        LossFit fw = fit(wt, LossModel{});
        CHECK(fd.x[0] == doctest::Approx(fw.x[0]).epsilon(1e-9));
        CHECK(fd.bulk == doctest::Approx(fw.bulk).epsilon(1e-9));
    }

    SUBCASE("single channel without background recovers the slope") {
        auto pure = model_points(designs, x_true, 0.0);
        LossModel m;
        m.include_bulk = false;
        LossFit g = fit(pure, m);
        CHECK(g.x[0] == doctest::Approx(x_true).epsilon(1e-9));
    }

    SUBCASE("nested models never fit worse") {
        LossModel small;
        small.channels = {};
        small.include_bulk = true;
        LossModel full; // SV + bulk
        CHECK(fit(pts, full).residual_norm <=
              fit(pts, small).residual_norm + 1e-12);
    }
}

TEST_CASE("fit error handling") {
    auto pts = model_points({sens("A", 2e3), sens("B", 3e3)}, 1e-11, 1e-7);
    SUBCASE("underdetermined") {
        std::vector<FitPoint> one{pts[0]};
        CHECK_THROWS_AS(fit(one, LossModel{}), std::invalid_argument);
    }
    SUBCASE("all-zero sensitivity column") {
        LossModel m;
        m.channels = {Interface::MV};
        CHECK_THROWS_AS(fit(pts, m), std::invalid_argument);
    }
    SUBCASE("nonpositive Q") {
        auto bad = pts;
        bad[0].Q = 0.0;
        CHECK_THROWS_AS(fit(bad, LossModel{}), std::invalid_argument);
    }
    SUBCASE("empty model") {
        LossModel m;
        m.channels = {};
        m.include_bulk = false;
        CHECK_THROWS_AS(fit(pts, m), std::invalid_argument);
    }
}

TEST_CASE("predict") {
    LossFit f;
    f.model = LossModel{};
    f.x = Eigen::VectorXd::Constant(1, 0.0);
    f.bulk = 1.0 / 3e6;

    double omega = 2.0 * pi * 5e9;
    Prediction p = predict(f, sens("none", 0.0), omega);
    CHECK(p.Q == doctest::Approx(3e6).epsilon(1e-12));
    CHECK(p.T1 == doctest::Approx(9.5493e-5).epsilon(1e-4)); // Q/omega

    f.x[0] = 1.6e-11;
    Prediction q = predict(f, sens("g", 2e4), omega);
    CHECK(q.Q == doctest::Approx(1.0 / (2e4 * 1.6e-11 + 1.0 / 3e6)).epsilon(1e-12));

    LossFit zero;
    zero.model = LossModel{};
    zero.x = Eigen::VectorXd::Zero(1);
    zero.bulk = 0.0;
    CHECK(predict(zero, sens("none", 0.0), omega).unbounded);
}

TEST_CASE("bootstrap") {
    auto designs = {sens("A", 2e3), sens("B", 3e3), sens("C", 2e4),
                    sens("D", 5e4), sens("E", 1e4), sens("F", 4e3)};
    auto pts = model_points(designs, 1.6e-11, 1.0 / 3e6);

    SUBCASE("deterministic per seed") {
        auto a = bootstrap(pts, LossModel{}, 200, 7);
        auto b = bootstrap(pts, LossModel{}, 200, 7);
        auto c = bootstrap(pts, LossModel{}, 200, 8);
        REQUIRE(a.size() == 2);
        CHECK(a[0].first == b[0].first);
        CHECK(a[1].second == b[1].second);
        bool differs = a[0].first != c[0].first || a[0].second != c[0].second;
        CHECK(differs);
    }

    SUBCASE("noiseless data gives degenerate intervals containing truth") {
        auto ci = bootstrap(pts, LossModel{}, 200, 1);
        CHECK(ci[0].first <= 1.6e-11 * (1 + 1e-6));
        CHECK(ci[0].second >= 1.6e-11 * (1 - 1e-6));
        CHECK((ci[0].second - ci[0].first) <= 1e-6 * 1.6e-11);
        CHECK(ci[0].first <= ci[0].second);
    }

    SUBCASE("input validation") {
        CHECK_THROWS_AS(bootstrap(pts, LossModel{}, 50, 1), std::invalid_argument);
        std::vector<FitPoint> few(pts.begin(), pts.begin() + 4);
        CHECK_THROWS_AS(bootstrap(few, LossModel{}, 200, 1), std::invalid_argument);
        CHECK_THROWS_AS(bootstrap(pts, LossModel{}, 200, 1, 1.5), std::invalid_argument);
    }
}

TEST_CASE("identifiability") {
    LossModel two;
    two.channels = {Interface::SM, Interface::SV};

    SUBCASE("proportional columns are flagged unresolvable") {
        std::vector<FitPoint> pts;
        for (double r : {1e3, 5e3, 2e4}) {
            FitPoint p;
            p.r = sens("d", r, 2.56 * r);
            p.Q = 1e6;
            pts.push_back(p);
        }
        auto rep = identifiability(pts, two);
        bool found = false;
        for (const auto& pr : rep.pairs) {
            if ((pr.a == "SM" && pr.b == "SV") || (pr.a == "SV" && pr.b == "SM")) {
                found = true;
                CHECK(pr.correlation == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(pr.unresolvable);
            }
        }
        CHECK(found);
        CHECK(rep.any_unresolvable);
        CHECK(rep.condition_number > 1e3);
    }

    SUBCASE("orthogonal columns are cleanly resolved") {
        std::vector<FitPoint> pts;
        FitPoint a, b;
        a.r = sens("a", 0.0, 1e4);
        b.r = sens("b", 1e4, 0.0);
        a.Q = b.Q = 1e6;
        pts = {a, b};
        LossModel m = two;
        m.include_bulk = false;
        auto rep = identifiability(pts, m);
        REQUIRE(rep.pairs.size() == 1);
        CHECK(rep.pairs[0].correlation == doctest::Approx(0.0));
        CHECK(!rep.any_unresolvable);
    }

    SUBCASE("needs at least two measurements") {
        std::vector<FitPoint> one(1);
        one[0].r = sens("a", 1e3);
        one[0].Q = 1e6;
        CHECK_THROWS_AS(identifiability(one, two), std::invalid_argument);
    }
}

TEST_CASE("design selection") {
    std::vector<SensitivityVector> cand = {
        sens("Alpha", 1e3, 5e3), sens("Bravo", 1.1e3, 5.5e3),
        sens("Charlie", 4e4, 9e3), sens("Delta", 2e4, 1e5)};

    SUBCASE("selecting all candidates returns all") {
        auto all = select_designs(cand, 4);
        CHECK(all == std::vector<int>{0, 1, 2, 3});
    }

    SUBCASE("a spread subset beats near-duplicates") {
        auto s = select_designs(cand, 3);
        REQUIRE(s.size() == 3);
        // Alpha and Bravo are nearly collinear; an optimal 3-subset keeps
        // only one of them
        bool both_dupes = std::count(s.begin(), s.end(), 0) &&
                          std::count(s.begin(), s.end(), 1);
        CHECK(!both_dupes);
    }

    SUBCASE("ties break deterministically by name") {
        std::vector<SensitivityVector> same = {
            sens("Zeta", 1e3, 2e3), sens("Eta", 1e3, 2e3), sens("Theta", 1e3, 2e3)};
        auto s = select_designs(same, 1);
        REQUIRE(s.size() == 1);
        CHECK(same[static_cast<size_t>(s[0])].design == "Eta");
    }

    SUBCASE("range checks") {
        CHECK_THROWS_AS(select_designs(cand, 0), std::invalid_argument);
        CHECK_THROWS_AS(select_designs(cand, 5), std::invalid_argument);
    }

    SUBCASE("condition number is finite for a good subset") {
        auto s = select_designs(cand, 3);
        double c = selection_condition_number(cand, s);
        CHECK(std::isfinite(c));
        CHECK(c >= 1.0);
    }
}
