#include <catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "panelmc/panelmc.hpp"

using namespace panelmc;
using Catch::Approx;

namespace {

std::string temp_path(const std::string& name) {
    return "harness_tmp_" + name;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace

TEST_CASE("synthetic generation") {
    SyntheticSpec spec;
    spec.n = 12;
    spec.t = 9;
    spec.rank = 3;
    spec.factor_scale = 1.5;
    spec.seed = 4242;

    SECTION("zero noise means Y equals the low-rank truth") {
        spec.noise_sigma = 0.0;
        const SyntheticPanel panel = generate_synthetic(spec);
        CHECK(panel.y.matrix() == panel.l_star.matrix());
    }
    SECTION("rank never exceeds the requested rank") {
        spec.noise_sigma = 0.3;
        const SyntheticPanel panel = generate_synthetic(spec);
        CHECK(norm(panel.l_star.matrix(), NormKind::rank()) <= 3.0);
    }
    SECTION("same seed gives bit-identical panels") {
        spec.noise_sigma = 0.7;
        const SyntheticPanel a = generate_synthetic(spec);
        const SyntheticPanel b = generate_synthetic(spec);
        CHECK(a.y.matrix() == b.y.matrix());
        CHECK(a.l_star.matrix() == b.l_star.matrix());
    }
    SECTION("invalid specs are rejected") {
        spec.rank = 100;
        CHECK_THROWS_AS(generate_synthetic(spec), InvalidSpecError);
    }
}

TEST_CASE("pseudo treatment masks") {
    SECTION("simultaneous blocks have the planned shape") {
        PseudoTreatmentPlan plan;
        plan.mode = PseudoTreatmentPlan::Mode::simultaneous;
        plan.n_treated = 8;
        plan.t0_ratio = 0.6;
        plan.replications = 4;
        plan.seed = 7;
        const auto masks = make_pseudo_masks(plan, 30, 20);
        REQUIRE(masks.size() == 4);
        for (const auto& m : masks) {
            CHECK(m.structure() == MaskStructure::block);
            // T0 = ceil(0.6*20) = 12, so 9 missing periods per treated unit
            CHECK(m.n_missing() == 8 * 9);
            CHECK(m.n_control() == 22);
        }
    }
    SECTION("staggered with adoption pinned at T is fully observed") {
        PseudoTreatmentPlan plan;
        plan.mode = PseudoTreatmentPlan::Mode::staggered;
        plan.n_treated = 5;
        plan.adoption_lo = 20;
        plan.adoption_hi = 20;
        plan.replications = 2;
        const auto masks = make_pseudo_masks(plan, 10, 20);
        for (const auto& m : masks) CHECK(m.n_missing() == 0);
    }
    SECTION("replications are distinct but reproducible") {
        PseudoTreatmentPlan plan;
        plan.mode = PseudoTreatmentPlan::Mode::staggered;
        plan.n_treated = 6;
        plan.replications = 3;
        plan.seed = 99;
        const auto a = make_pseudo_masks(plan, 12, 10);
        const auto b = make_pseudo_masks(plan, 12, 10);
        REQUIRE(a.size() == 3);
        for (size_t r = 0; r < 3; ++r)
            CHECK((a[r].array() == b[r].array()).all());
        CHECK(!(a[0].array() == a[1].array()).all());
    }
    SECTION("infeasible plans are rejected") {
        PseudoTreatmentPlan plan;
        plan.n_treated = 12;
        CHECK_THROWS_AS(make_pseudo_masks(plan, 12, 10), InfeasibleError);
    }
}

TEST_CASE("rmse on missing cells") {
    Rng rng(801);
    const Matrix truth = rng.normal_matrix(5, 4);
    const auto o = mask_block(5, 4, 3, {1, 3});

    SECTION("perfect estimate scores zero") {
        CHECK(rmse_on_missing(PanelMatrix(truth), PanelMatrix(truth), o) == 0.0);
    }
    SECTION("constant offset scores its magnitude") {
        Matrix est = truth;
        for (const auto& [i, t] : o.missing_cells()) est(i, t) += -1.75;
        CHECK(rmse_on_missing(PanelMatrix(est), PanelMatrix(truth), o) ==
              Approx(1.75).margin(1e-12));
    }
    SECTION("two-cell arithmetic") {
        const auto two = mask_block(5, 4, 4, {0, 2});
        Matrix est = truth;
        est(0, 3) += 3.0;
        est(2, 3) += 4.0;
        CHECK(rmse_on_missing(PanelMatrix(est), PanelMatrix(truth), two) ==
              Approx(5.0 / std::sqrt(2.0)).margin(1e-12));
    }
    SECTION("empty missing set errors") {
        CHECK_THROWS_AS(rmse_on_missing(PanelMatrix(truth), PanelMatrix(truth),
                                        ObservationMask::full(5, 4)),
                        MaskError);
    }
}

TEST_CASE("run_comparison on additive data scores DID at zero") {
    Rng rng(811);
    const Index n = 10, t = 8;
    const Vector a = rng.normal_matrix(n, 1);
    const Vector b = rng.normal_matrix(t, 1);
    Matrix y(n, t);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < t; ++j) y(i, j) = a(i) + b(j);

    PseudoTreatmentPlan plan;
    plan.mode = PseudoTreatmentPlan::Mode::staggered;
    plan.n_treated = 4;
    plan.replications = 5;
    plan.seed = 3;
    const auto report = run_comparison(PanelMatrix(y), plan,
                                       {EstimatorSpec::parse("did")});
    REQUIRE(report.estimators.size() == 1);
    CHECK(report.estimators[0].n_reps == 5);
    CHECK(report.estimators[0].mean_rmse < 1e-8);
}

TEST_CASE("run_comparison with lambda at the annihilation point predicts zero") {
    Rng rng(821);
    const PanelMatrix y(rng.normal_matrix(8, 8));
    PseudoTreatmentPlan plan;
    plan.mode = PseudoTreatmentPlan::Mode::simultaneous;
    plan.n_treated = 3;
    plan.t0_ratio = 0.5;
    plan.replications = 1;
    plan.seed = 11;
    const auto masks = make_pseudo_masks(plan, 8, 8);

    EstimatorSpec spec = EstimatorSpec::parse("mc-nnm");
    spec.lambda = lambda_max(y, masks[0]);
    const auto report = run_comparison(y, plan, {spec});

    double sse = 0.0;
    for (const auto& [i, t] : masks[0].missing_cells()) sse += y(i, t) * y(i, t);
    const double expected =
        std::sqrt(sse / static_cast<double>(masks[0].n_missing()));
    CHECK(report.estimators[0].mean_rmse == Approx(expected).margin(1e-10));
}

TEST_CASE("run_comparison reports are reproducible and thread-invariant") {
    Rng rng(831);
    SyntheticSpec spec;
    spec.n = 16;
    spec.t = 12;
    spec.rank = 2;
    spec.noise_sigma = 0.5;
    spec.seed = 55;
    const SyntheticPanel panel = generate_synthetic(spec);

    PseudoTreatmentPlan plan;
    plan.mode = PseudoTreatmentPlan::Mode::staggered;
    plan.n_treated = 8;
    plan.replications = 6;
    plan.seed = 21;

    EstimatorSpec mc = EstimatorSpec::parse("mc-nnm");
    CvConfig cv;
    cv.lambda_grid = default_lambda_grid(panel.y, ObservationMask::full(16, 12), 6);
    mc.cv = cv;
    const std::vector<EstimatorSpec> estimators{EstimatorSpec::parse("did"), mc};

    const auto serial = run_comparison(panel.y, plan, estimators, 1);
    const auto threaded = run_comparison(panel.y, plan, estimators, 8);
    const auto repeat = run_comparison(panel.y, plan, estimators, 1);
    REQUIRE(serial.estimators.size() == 2);
    for (size_t e = 0; e < 2; ++e) {
        CHECK(serial.estimators[e].mean_rmse == threaded.estimators[e].mean_rmse);
        CHECK(serial.estimators[e].mean_rmse == repeat.estimators[e].mean_rmse);
        for (size_t r = 0; r < 6; ++r)
            CHECK(serial.estimators[e].replications[r].rmse ==
                  threaded.estimators[e].replications[r].rmse);
    }
}

TEST_CASE("infeasible estimators are skipped, not fatal") {
    Rng rng(841);
    const PanelMatrix y(rng.normal_matrix(6, 8));
    PseudoTreatmentPlan plan;
    plan.mode = PseudoTreatmentPlan::Mode::simultaneous;
    plan.n_treated = 5;  // a single control row: hr has too few samples
    plan.t0_ratio = 0.9;
    plan.replications = 2;
    plan.seed = 17;
    const auto report =
        run_comparison(y, plan, {EstimatorSpec::parse("hr"), EstimatorSpec::parse("did")});
    CHECK(report.estimators[0].skipped == 2);
    CHECK(report.estimators[0].n_reps == 0);
    CHECK(report.estimators[1].n_reps == 2);
    for (const auto& cell : report.estimators[0].replications)
        CHECK(!cell.skip_reason.empty());
}

TEST_CASE("panel csv round trip") {
    Rng rng(851);
    const Matrix y = rng.normal_matrix(4, 3);
    const auto mask = mask_staggered(3, {3, 2, 3, 1});
    const std::string path = temp_path("roundtrip.csv");
    write_panel_csv(path, PanelMatrix(y), mask);
    const LoadedPanel loaded = load_panel_csv(path);
    CHECK(loaded.y.matrix() == y);  // bit-exact through %.17g
    CHECK((loaded.mask.array() == mask.array()).all());
    CHECK(loaded.unit_names.size() == 4);
    std::remove(path.c_str());
}

TEST_CASE("panel csv error reporting") {
    SECTION("missing column") {
        const std::string path = temp_path("badheader.csv");
        write_file(path, "unit,time,outcome\na,1,2\n");
        CHECK_THROWS_WITH(load_panel_csv(path),
                          Catch::Matchers::ContainsSubstring("header"));
        std::remove(path.c_str());
    }
    SECTION("duplicate cell names the line") {
        const std::string path = temp_path("dup.csv");
        write_file(path,
                   "unit,time,outcome,treated\na,1,1.0,0\na,2,2.0,0\na,1,3.0,0\nb,1,"
                   "1.0,0\nb,2,1.0,0\n");
        CHECK_THROWS_WITH(load_panel_csv(path),
                          Catch::Matchers::ContainsSubstring("line 4"));
        std::remove(path.c_str());
    }
    SECTION("non-rectangular index sets") {
        const std::string path = temp_path("ragged.csv");
        write_file(path, "unit,time,outcome,treated\na,1,1.0,0\na,2,2.0,0\nb,1,1.0,0\n");
        CHECK_THROWS_WITH(load_panel_csv(path),
                          Catch::Matchers::ContainsSubstring("non-rectangular"));
        std::remove(path.c_str());
    }
    SECTION("treated flag must be 0 or 1") {
        const std::string path = temp_path("flag.csv");
        write_file(path, "unit,time,outcome,treated\na,1,1.0,2\n");
        CHECK_THROWS_AS(load_panel_csv(path), ParseError);
        std::remove(path.c_str());
    }
    SECTION("treated or empty outcome marks the cell missing") {
        const std::string path = temp_path("missing.csv");
        write_file(path,
                   "unit,time,outcome,treated\na,1,1.5,0\na,2,,0\nb,1,2.5,1\nb,2,3.5,0\n");
        const LoadedPanel loaded = load_panel_csv(path);
        CHECK(loaded.mask.n_missing() == 2);
        CHECK(!loaded.mask.is_observed(0, 1));
        CHECK(!loaded.mask.is_observed(1, 0));
        CHECK(loaded.y(1, 0) == 2.5);  // value kept even though masked
        std::remove(path.c_str());
    }
}

TEST_CASE("covariate csv readers") {
    const std::string upath = temp_path("unitcov.csv");
    write_file(upath, "unit,income,age\nb,2.0,30\na,1.0,40\n");
    const std::vector<std::string> units{"a", "b"};
    const Matrix x = load_unit_covariates(upath, units);
    CHECK(x(0, 0) == 1.0);  // row order follows the panel, not the file
    CHECK(x(1, 1) == 30.0);
    std::remove(upath.c_str());

    const std::string tpath = temp_path("timecov.csv");
    write_file(tpath, "time,policy\n2,1\n1,0\n");
    const Matrix z = load_time_covariates(tpath, {"1", "2"});
    CHECK(z(0, 0) == 0.0);
    CHECK(z(1, 0) == 1.0);
    std::remove(tpath.c_str());

    const std::string vpath = temp_path("utcov.csv");
    write_file(vpath,
               "unit,time,shock\na,1,0.1\na,2,0.2\nb,1,0.3\nb,2,0.4\n");
    const auto v = load_unit_time_covariates(vpath, units, {"1", "2"});
    REQUIRE(v.size() == 1);
    CHECK(v[0](1, 1) == 0.4);
    std::remove(vpath.c_str());

    SECTION("missing units are rejected") {
        const std::string bad = temp_path("badcov.csv");
        write_file(bad, "unit,income\na,1.0\n");
        CHECK_THROWS_AS(load_unit_covariates(bad, units), ParseError);
        std::remove(bad.c_str());
    }
}

TEST_CASE("report serialization is stable") {
    EvalReport report;
    report.seed = 9;
    report.replications = 2;
    EstimatorReport er;
    er.name = "mc-nnm";
    er.mean_rmse = 0.5;
    er.se = 0.01;
    er.n_reps = 2;
    ReplicationOutcome r0;
    r0.rmse = 0.49;
    r0.effective_rank = 3;
    r0.lambda_used = 0.02;
    er.replications = {r0, r0};
    report.estimators = {er};

    const auto j = report_to_json(report, {{"plan", "staggered:nt=4"}});
    CHECK(j["estimators"][0]["name"] == "mc-nnm");
    CHECK(j["estimators"][0]["n_reps"] == 2);
    CHECK(j["config_echo"]["plan"] == "staggered:nt=4");
    CHECK(j["seed"] == 9);

    const std::string path = temp_path("report.json");
    write_report(report, {}, path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("mean_rmse") != std::string::npos);
    std::remove(path.c_str());

    const std::string csv_path = temp_path("report.csv");
    write_report_csv(report, csv_path);
    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "estimator,replication,rmse,effective_rank,lambda,skipped");
    std::getline(csv, line);
    CHECK(line.find("mc-nnm,0,") == 0);
    std::remove(csv_path.c_str());
}

TEST_CASE("global descent hook saw no violations in this suite") {
    INFO(oracles::descent_monitor().first_message);
    CHECK(oracles::descent_monitor().violations.load() == 0);
}
