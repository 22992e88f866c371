#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "qloss/common.hpp"
#include "qloss/measurements.hpp"

using namespace qloss;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
}

SensitivityVector sens(const std::string& name, double r_sv) {
    SensitivityVector v;
    v.design = name;
    v.r_sv = r_sv;
    return v;
}

} // namespace

TEST_CASE("q_from_t1") {
    // Q = omega T1
    CHECK(q_from_t1(5e9, 95.493e-6) == doctest::Approx(3.0e6).epsilon(1e-4));
    CHECK(q_from_t1(1.0 / (2.0 * pi), 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    // linear in both arguments
    CHECK(q_from_t1(5e9, 2e-5) == doctest::Approx(2.0 * q_from_t1(5e9, 1e-5)));
    CHECK_THROWS_AS(q_from_t1(0.0, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(q_from_t1(5e9, -1e-5), std::invalid_argument);
}

TEST_CASE("aggregate") {
    SUBCASE("mean and sample standard deviation") {
        T1Stats st = aggregate({90e-6, 100e-6, 110e-6});
        CHECK(st.mean == doctest::Approx(100e-6).epsilon(1e-12));
        CHECK(st.std == doctest::Approx(10e-6).epsilon(1e-12));
        CHECK(!st.low_count);
        CHECK(st.histogram.counts.size() >= 5);
        CHECK(st.histogram.edges.size() == st.histogram.counts.size() + 1);
        int total = 0;
        for (int c : st.histogram.counts) total += c;
        CHECK(total == 3);
    }

    SUBCASE("single sample is flagged low-count with zero std") {
        T1Stats st = aggregate({42e-6});
        CHECK(st.mean == 42e-6);
        CHECK(st.std == 0.0);
        CHECK(st.low_count);
    }

    SUBCASE("constant trace collapses to one bin") {
        T1Stats st = aggregate({5e-6, 5e-6, 5e-6, 5e-6});
        CHECK(st.std == 0.0);
        CHECK(st.histogram.counts.size() == 1);
        CHECK(st.histogram.counts[0] == 4);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
        CHECK_THROWS_AS(aggregate({1e-6, -1e-6}), std::invalid_argument);
    }
}

TEST_CASE("measurement csv io") {
    const std::string header =
        "qubit_id,wafer,substrate,process,design,freq_GHz,t1_us_mean,t1_us_std,n_samples\n";

    SUBCASE("summary round trip is exact") {
        std::string path = tmp_path("qloss_meas_rt.csv");
        write_file(path, header +
                             "q1,W0,EFG,acetone,Hero,5.1,23.75,4.5,12\n"
                             "q2,W1,HEM,glacial-acetic,Guard,4.8,11.5,2.25,9\n");
        Ensemble e = load_measurements_csv(path);
        REQUIRE(e.devices.size() == 2);
        CHECK(e.devices[0].qubit_id == "q1");
        CHECK(e.devices[0].design == "Hero");
        CHECK(e.devices[0].frequency == doctest::Approx(5.1e9).epsilon(1e-14));
        CHECK(e.devices[0].t1_mean == doctest::Approx(23.75e-6).epsilon(1e-14));
        CHECK(e.devices[0].Q ==
              doctest::Approx(2.0 * pi * 5.1e9 * 23.75e-6).epsilon(1e-12));
        CHECK(e.devices[1].n_samples == 9);

        std::string path2 = tmp_path("qloss_meas_rt2.csv");
        save_measurements_csv(e, path2);
        Ensemble e2 = load_measurements_csv(path2);
        REQUIRE(e2.devices.size() == 2);
        // %.17g preserves the value; the us <-> s unit conversion may cost
        // one ulp
        CHECK(e2.devices[0].t1_mean ==
              doctest::Approx(e.devices[0].t1_mean).epsilon(1e-15));
        CHECK(e2.devices[1].Q == doctest::Approx(e.devices[1].Q).epsilon(1e-15));
        std::filesystem::remove(path);
        std::filesystem::remove(path2);
    }

    SUBCASE("long form aggregates per qubit") {
        std::string path = tmp_path("qloss_meas_long.csv");
        write_file(path,
                   "qubit_id,wafer,substrate,process,design,freq_GHz,timestamp_iso8601,t1_us\n"
                   "q1,W0,EFG,acetone,Hero,5.0,2016-01-01T00:00:00Z,90\n"
                   "q1,W0,EFG,acetone,Hero,5.0,2016-01-01T06:00:00Z,100\n"
                   "q1,W0,EFG,acetone,Hero,5.0,2016-01-01T12:00:00Z,110\n"
                   "q2,W1,EFG,acetone,Guard,5.0,2016-01-02T00:00:00Z,50\n");
        Ensemble e = load_measurements_csv(path);
        REQUIRE(e.devices.size() == 2);
        CHECK(e.devices[0].n_samples == 3);
        CHECK(e.devices[0].t1_mean == doctest::Approx(100e-6).epsilon(1e-12));
        CHECK(e.devices[0].t1_std == doctest::Approx(10e-6).epsilon(1e-12));
        CHECK(e.devices[0].t1_samples.size() == 3);
        CHECK(e.devices[1].n_samples == 1);
        std::filesystem::remove(path);
    }

    SUBCASE("errors carry the line number") {
        std::string path = tmp_path("qloss_meas_bad.csv");

        write_file(path, header + "q1,W0,EFG,a,Hero,5.0,20,1,5\n"
                                  "q1,W0,EFG,a,Hero,5.0,21,1,5\n");
        CHECK_THROWS_WITH_AS(load_measurements_csv(path),
                             doctest::Contains(":3"), std::runtime_error);

        write_file(path, header + "q1,W0,EFG,a,Hero,5.0,-20,1,5\n");
        CHECK_THROWS_WITH_AS(load_measurements_csv(path),
                             doctest::Contains(":2"), std::runtime_error);

        write_file(path, header + "q1,W0,EFG,a,Hero,5.0,twenty,1,5\n");
        CHECK_THROWS_AS(load_measurements_csv(path), std::runtime_error);

        write_file(path, header + "q1,W0,EFG,a,Hero,5.0,20,1\n");
        CHECK_THROWS_WITH_AS(load_measurements_csv(path),
                             doctest::Contains("columns"), std::runtime_error);

        write_file(path, "not,a,known,header\n");
        CHECK_THROWS_WITH_AS(load_measurements_csv(path),
                             doctest::Contains("header"), std::runtime_error);

        write_file(path, header + "q1,W0,EFG,a,Mystery,5.0,20,1,5\n");
        CHECK_NOTHROW(load_measurements_csv(path, true));
        CHECK_THROWS_WITH_AS(load_measurements_csv(path, false),
                             doctest::Contains("Mystery"), std::runtime_error);

        CHECK_THROWS_AS(load_measurements_csv(tmp_path("qloss_no_such.csv")),
                        std::runtime_error);
        std::filesystem::remove(path);
    }
}

TEST_CASE("synthesize") {
    std::vector<SensitivityVector> designs = {sens("Hero", 3e3), sens("Guard", 2e4)};
    SynthesisTruth truth;
    truth.model = LossModel{};
    truth.x = Eigen::VectorXd::Constant(1, 1.6e-11);
    truth.bulk = 1.0 / 3e6;

    SUBCASE("sigma = 0 reproduces the model exactly") {
        Ensemble e = synthesize(designs, truth, 0.0, 3, 1, 5e9);
        REQUIRE(e.devices.size() == 6);
        for (const auto& d : e.devices) {
            double r = (d.design == "Hero") ? 3e3 : 2e4;
            double q_true = 1.0 / (r * 1.6e-11 + 1.0 / 3e6);
            CHECK(d.Q == doctest::Approx(q_true).epsilon(1e-12));
            CHECK(d.t1_mean ==
                  doctest::Approx(q_true / (2.0 * pi * 5e9)).epsilon(1e-12));
        }
    }

    SUBCASE("deterministic per seed, wafers round-robin") {
        Ensemble a = synthesize(designs, truth, 0.2, 9, 77, 5e9);
        Ensemble b = synthesize(designs, truth, 0.2, 9, 77, 5e9);
        Ensemble c = synthesize(designs, truth, 0.2, 9, 78, 5e9);
        REQUIRE(a.devices.size() == 18);
        for (size_t i = 0; i < a.devices.size(); ++i) {
            CHECK(a.devices[i].Q == b.devices[i].Q);
            CHECK(a.devices[i].qubit_id == b.devices[i].qubit_id);
        }
        CHECK(a.devices[0].Q != c.devices[0].Q);
        CHECK(a.devices[0].wafer == "W0");
        CHECK(a.devices[6].wafer == "W0");
        CHECK(a.devices[7].wafer == "W1");
    }

    SUBCASE("scatter matches the requested lognormal sigma") {
        Ensemble e = synthesize({sens("Hero", 3e3)}, truth, 0.2, 4000, 3, 5e9);
        double sum = 0.0, ss = 0.0;
        for (const auto& d : e.devices) sum += std::log(d.Q);
        double mean = sum / static_cast<double>(e.devices.size());
        for (const auto& d : e.devices) {
            double dl = std::log(d.Q) - mean;
            ss += dl * dl;
        }
        double sd = std::sqrt(ss / (static_cast<double>(e.devices.size()) - 1.0));
        CHECK(sd == doctest::Approx(0.2).epsilon(0.05));
    }

    SUBCASE("input validation") {
        CHECK_THROWS_AS(synthesize(designs, truth, -0.1, 3, 1, 5e9),
                        std::invalid_argument);
        CHECK_THROWS_AS(synthesize(designs, truth, 0.1, 0, 1, 5e9),
                        std::invalid_argument);
        CHECK_THROWS_AS(synthesize(designs, truth, 0.1, 3, 1, -5e9),
                        std::invalid_argument);
        SynthesisTruth lossless;
        lossless.model = LossModel{};
        lossless.x = Eigen::VectorXd::Zero(1);
        lossless.bulk = 0.0;
        CHECK_THROWS_AS(synthesize(designs, lossless, 0.1, 3, 1, 5e9),
                        std::invalid_argument);
    }
}

TEST_CASE("to_fit_points joins measurements with sensitivities") {
    std::vector<SensitivityVector> designs = {sens("Hero", 3e3), sens("Guard", 2e4)};
    SynthesisTruth truth;
    truth.model = LossModel{};
    truth.x = Eigen::VectorXd::Constant(1, 1.6e-11);
    truth.bulk = 1.0 / 3e6;
    Ensemble e = synthesize(designs, truth, 0.0, 2, 1, 5e9);

    auto pts = to_fit_points(e, designs);
    REQUIRE(pts.size() == 4);
    CHECK(pts[0].r.design == "Hero");
    CHECK(pts[0].Q == e.devices[0].Q);

    SUBCASE("missing sensitivity entries are reported by name") {
        std::vector<SensitivityVector> partial = {sens("Hero", 3e3)};
        CHECK_THROWS_WITH_AS(to_fit_points(e, partial), doctest::Contains("Guard"),
                             std::runtime_error);
    }

    SUBCASE("empty join is an error") {
        std::vector<SensitivityVector> other = {sens("Other", 1e3)};
        CHECK_THROWS_AS(to_fit_points(e, other), std::runtime_error);
    }

    SUBCASE("round trip through fit recovers the truth") {
        Ensemble big = synthesize(designs, truth, 0.0, 5, 1, 5e9);
        LossFit f = fit(to_fit_points(big, designs), LossModel{});
        CHECK(f.x[0] == doctest::Approx(1.6e-11).epsilon(1e-6));
        CHECK(f.bulk == doctest::Approx(1.0 / 3e6).epsilon(1e-6));
    }
}
