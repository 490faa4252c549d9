#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "panelmc/panelmc.hpp"

using namespace panelmc;
using Catch::Approx;

namespace {

Matrix diag2(double a, double b) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

// rank-1 panel with unit-norm factors scaled to Frobenius norm `scale`
PanelMatrix rank1_panel(Index n, Index t, double scale, Rng& rng) {
    Vector u = rng.normal_matrix(n, 1);
    Vector v = rng.normal_matrix(t, 1);
    u /= u.norm();
    v /= v.norm();
    return PanelMatrix(scale * u * v.transpose());
}

ObservationMask uniform_mask(Index n, Index t, double p_observed, Rng& rng) {
    BoolArray obs(n, t);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < t; ++j) obs(i, j) = rng.uniform() < p_observed;
    return ObservationMask(n, t, obs);
}

}  // namespace

TEST_CASE("shrink on nonnegative diagonals") {
    CHECK((shrink(diag2(3, 1), 1.0) - diag2(2, 0)).norm() < 1e-12);
    CHECK(shrink(diag2(3, 1), 3.0).norm() < 1e-12);
    Rng rng(11);
    const Matrix a = rng.normal_matrix(5, 4);
    CHECK((shrink(a, 0.0) - a).norm() < 1e-10);
    CHECK_THROWS_AS(shrink(a, -1.0), InvalidSpecError);
}

TEST_CASE("shrink spectrum law and nonexpansiveness") {
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix a = rng.normal_matrix(6, 5);
        const Matrix b = rng.normal_matrix(6, 5);
        const double tau = rng.uniform() * 3.0;
        const Vector sa = singular_values(a);
        const Vector ss = singular_values(shrink(a, tau));
        for (Index i = 0; i < ss.size(); ++i)
            CHECK(ss(i) == Approx(std::max(sa(i) - tau, 0.0)).margin(1e-8));
        CHECK(norm(Matrix(shrink(a, tau) - shrink(b, tau)), NormKind::frobenius()) <=
              (a - b).norm() + 1e-8);
        CHECK(norm(Matrix(shrink(a, tau)), NormKind::rank()) <=
              norm(a, NormKind::rank()));
    }
}

TEST_CASE("fully observed fit is one shrink of Y") {
    Rng rng(31);
    const PanelMatrix y(rng.normal_matrix(8, 6));
    const auto o = ObservationMask::full(8, 6);
    McnnmConfig cfg;
    cfg.lambda = 0.011;
    const FitResult fit = fit_mcnnm(y, o, cfg);
    const Matrix expected = shrink(y.matrix(), cfg.lambda * 48.0 / 2.0);
    CHECK((fit.estimate.matrix() - expected).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.converged);

    SECTION("lambda zero anchors the observed entries") {
        cfg.lambda = 0.0;
        const FitResult anchored = fit_mcnnm(y, o, cfg);
        CHECK((anchored.estimate.matrix() - y.matrix()).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("lambda at the annihilation threshold gives the zero matrix") {
    Rng rng(41);
    const PanelMatrix y(rng.normal_matrix(9, 7));
    const auto o = uniform_mask(9, 7, 0.7, rng);
    McnnmConfig cfg;
    cfg.lambda = lambda_max(y, o);
    const FitResult fit = fit_mcnnm(y, o, cfg);
    CHECK(fit.estimate.matrix().cwiseAbs().maxCoeff() < 1e-10);
    CHECK(fit.effective_rank == 0);

    SECTION("slightly below the threshold the fit is nonzero") {
        cfg.lambda *= 0.98;
        CHECK(fit_mcnnm(y, o, cfg).estimate.matrix().cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("lambda_max values") {
    SECTION("diagonal example") {
        const PanelMatrix y(diag2(4, 0));
        CHECK(lambda_max(y, ObservationMask::full(2, 2)) == Approx(2.0));
    }
    SECTION("zero matrix is degenerate") {
        const PanelMatrix y(Matrix::Zero(3, 3));
        CHECK(lambda_max(y, ObservationMask::full(3, 3)) == 0.0);
    }
    SECTION("matches the power iteration oracle on a masked panel") {
        Rng rng(51);
        const PanelMatrix y(rng.normal_matrix(10, 8));
        const auto o = uniform_mask(10, 8, 0.6, rng);
        const Matrix masked = y.matrix().cwiseProduct(o.indicator());
        const double oracle = 2.0 * oracles::power_iteration_opnorm(masked) /
                              static_cast<double>(o.n_observed());
        CHECK(lambda_max(y, o) == Approx(oracle).epsilon(1e-6));
    }
}

TEST_CASE("noiseless rank-1 recovery") {
    // 30% of the entries hidden uniformly; recovery error well under 5%
    Rng rng(61);
    for (int rep = 0; rep < 3; ++rep) {
        const PanelMatrix l_star = rank1_panel(20, 20, 20.0, rng);
        const auto o = uniform_mask(20, 20, 0.7, rng);
        McnnmConfig cfg;
        cfg.lambda = 0.01 * lambda_max(l_star, o);
        const FitResult fit = fit_mcnnm(l_star, o, cfg);
        const double rel =
            (fit.estimate.matrix() - l_star.matrix()).norm() / l_star.matrix().norm();
        CHECK(rel < 0.05);
        CHECK(fit.converged);
    }
}

TEST_CASE("fit error paths and flags") {
    Rng rng(71);
    const PanelMatrix y(rng.normal_matrix(5, 5));
    SECTION("empty mask") {
        const auto o = ObservationMask::from_cells(5, 5, {});
        McnnmConfig cfg;
        CHECK_THROWS_AS(fit_mcnnm(y, o, cfg), MaskError);
    }
    SECTION("iteration budget exhausted flags converged=false") {
        const auto o = uniform_mask(5, 5, 0.6, rng);
        McnnmConfig cfg;
        cfg.lambda = 0.001 * lambda_max(y, o);
        cfg.max_iterations = 1;
        cfg.tolerance = 1e-14;
        CHECK_FALSE(fit_mcnnm(y, o, cfg).converged);
    }
    SECTION("clip_max bounds the estimate") {
        const auto o = ObservationMask::full(5, 5);
        McnnmConfig cfg;
        cfg.lambda = 0.0;
        cfg.clip_max = 0.5;
        const FitResult fit = fit_mcnnm(y, o, cfg);
        CHECK(fit.estimate.matrix().cwiseAbs().maxCoeff() <= 0.5);
    }
    SECTION("bad config is rejected") {
        McnnmConfig cfg;
        cfg.tolerance = 0.0;
        CHECK_THROWS_AS(fit_mcnnm(y, ObservationMask::full(5, 5), cfg),
                        InvalidSpecError);
    }
}

TEST_CASE("objective trace is nonincreasing") {
    Rng rng(81);
    for (int rep = 0; rep < 8; ++rep) {
        const PanelMatrix y(rng.normal_matrix(12, 9));
        const auto o = uniform_mask(12, 9, 0.65, rng);
        McnnmConfig cfg;
        cfg.lambda = (0.02 + 0.3 * rng.uniform()) * lambda_max(y, o);
        const FitResult fit = fit_mcnnm(y, o, cfg);
        for (size_t k = 1; k < fit.objective_trace.size(); ++k)
            CHECK(fit.objective_trace[k] <= fit.objective_trace[k - 1] + 1e-10);
    }
}

TEST_CASE("determinism of fits") {
    Rng rng(91);
    const PanelMatrix y(rng.normal_matrix(10, 10));
    const auto o = uniform_mask(10, 10, 0.7, rng);
    McnnmConfig cfg;
    cfg.lambda = 0.05 * lambda_max(y, o);
    const FitResult a = fit_mcnnm(y, o, cfg);
    const FitResult b = fit_mcnnm(y, o, cfg);
    CHECK(a.estimate.matrix() == b.estimate.matrix());  // bit identical
}

TEST_CASE("default lambda grid shape") {
    Rng rng(101);
    const PanelMatrix y(rng.normal_matrix(6, 6));
    const auto o = ObservationMask::full(6, 6);
    const auto grid = default_lambda_grid(y, o);
    REQUIRE(grid.size() == 30);
    CHECK(grid.front() == Approx(lambda_max(y, o)));
    CHECK(grid.back() == 0.0);
    CHECK(grid[28] == Approx(1e-4 * lambda_max(y, o)).epsilon(1e-9));
    for (size_t j = 1; j < grid.size(); ++j) CHECK(grid[j] < grid[j - 1]);
}

TEST_CASE("cross validation") {
    Rng rng(111);

    SECTION("fold cardinality follows |O|^2/NT") {
        // N=T=10 with |O| = 80: folds of 64, holdouts of 16
        BoolArray obs = BoolArray::Constant(10, 10, true);
        int hidden = 0;
        while (hidden < 20) {
            const Index i = static_cast<Index>(rng.uniform_int(0, 9));
            const Index t = static_cast<Index>(rng.uniform_int(0, 9));
            if (obs(i, t)) {
                obs(i, t) = false;
                ++hidden;
            }
        }
        const ObservationMask o(10, 10, obs);
        const PanelMatrix y(rng.normal_matrix(10, 10));
        CvConfig cv;
        cv.lambda_grid = {lambda_max(y, o)};
        cv.seed = 5;
        const CvResult res = cross_validate(y, o, cv, McnnmConfig{});
        CHECK(res.fold_cardinality == 64);
        CHECK(res.holdout_cardinality == 16);
        CHECK(res.lambda_star == cv.lambda_grid[0]);  // singleton grid
    }

    SECTION("small lambda wins on a noiseless low-rank panel") {
        Rng gen(121);
        const PanelMatrix l_star = rank1_panel(14, 14, 14.0, gen);
        const auto o = uniform_mask(14, 14, 0.75, gen);
        const double lmax = lambda_max(l_star, o);
        CvConfig cv;
        cv.lambda_grid = {lmax, 0.001 * lmax};
        cv.seed = 9;
        const CvResult res = cross_validate(l_star, o, cv, McnnmConfig{});
        CHECK(res.lambda_star == Approx(0.001 * lmax));
        CHECK(res.mean_holdout_mse[1] < res.mean_holdout_mse[0]);
    }

    SECTION("degenerate cases error") {
        const PanelMatrix y(rng.normal_matrix(6, 6));
        CvConfig cv;
        cv.lambda_grid = {1.0, 0.5};
        CHECK_THROWS_AS(
            cross_validate(y, ObservationMask::full(6, 6), cv, McnnmConfig{}),
            MaskError);
        // 3 observed cells in a 6x6 grid: floor(9/36) = 0
        const auto tiny = ObservationMask::from_cells(6, 6, {{0, 0}, {1, 1}, {2, 2}});
        CHECK_THROWS_AS(cross_validate(y, tiny, cv, McnnmConfig{}), MaskError);
    }

    SECTION("grid must be strictly descending") {
        const PanelMatrix y(rng.normal_matrix(6, 6));
        const auto o = uniform_mask(6, 6, 0.8, rng);
        CvConfig cv;
        cv.lambda_grid = {0.5, 0.5};
        CHECK_THROWS_AS(cross_validate(y, o, cv, McnnmConfig{}), InvalidSpecError);
    }

    SECTION("lambda_star is identical across thread counts and runs") {
        Rng gen(131);
        const PanelMatrix l_star = rank1_panel(12, 12, 10.0, gen);
        const PanelMatrix y(
            Matrix(l_star.matrix() + 0.1 * gen.normal_matrix(12, 12)));
        const auto o = uniform_mask(12, 12, 0.7, gen);
        CvConfig cv;
        cv.lambda_grid = default_lambda_grid(y, o, 8);
        cv.seed = 77;
        const CvResult serial = cross_validate(y, o, cv, McnnmConfig{}, 1);
        const CvResult parallel = cross_validate(y, o, cv, McnnmConfig{}, 4);
        const CvResult repeat = cross_validate(y, o, cv, McnnmConfig{}, 1);
        CHECK(serial.lambda_star == parallel.lambda_star);
        CHECK(serial.lambda_star == repeat.lambda_star);
        CHECK(serial.mean_holdout_mse == parallel.mean_holdout_mse);
    }
}

TEST_CASE("factorization of the fitted matrix") {
    SECTION("zero matrix gives empty factors") {
        FitResult fit;
        fit.estimate = PanelMatrix::zero(4, 3);
        const FactorPair f = factorize(fit);
        CHECK(f.a.cols() == 0);
        CHECK(f.b.cols() == 0);
    }
    SECTION("rank-1 closed form") {
        Rng rng(141);
        Vector u = rng.normal_matrix(5, 1);
        Vector v = rng.normal_matrix(4, 1);
        u /= u.norm();
        v /= v.norm();
        FitResult fit;
        fit.estimate = PanelMatrix(2.0 * u * v.transpose());
        const FactorPair f = factorize(fit);
        REQUIRE(f.a.cols() == 1);
        CHECK(f.a.squaredNorm() == Approx(2.0).margin(1e-10));
        CHECK(f.b.squaredNorm() == Approx(2.0).margin(1e-10));
        CHECK((f.a * f.b.transpose() - fit.estimate.matrix()).norm() < 1e-10);
    }
    SECTION("factor norms add to twice the nuclear norm") {
        Rng rng(151);
        const Matrix u = rng.normal_matrix(5, 2);
        const Matrix v = rng.normal_matrix(4, 2);
        FitResult fit;
        fit.estimate = PanelMatrix(u * v.transpose());
        const FactorPair f = factorize(fit);
        const double nuclear = singular_values(fit.estimate.matrix()).sum();
        CHECK(f.a.squaredNorm() + f.b.squaredNorm() ==
              Approx(2.0 * nuclear).epsilon(1e-10));
        CHECK(f.a.squaredNorm() == Approx(nuclear).epsilon(1e-10));
    }
    SECTION("identity holds on converged fits") {
        Rng rng(161);
        const PanelMatrix y(rng.normal_matrix(10, 8));
        const auto o = uniform_mask(10, 8, 0.7, rng);
        McnnmConfig cfg;
        cfg.lambda = 0.2 * lambda_max(y, o);
        const FitResult fit = fit_mcnnm(y, o, cfg);
        REQUIRE(fit.converged);
        const FactorPair f = factorize(fit);
        const double nuclear = singular_values(fit.estimate.matrix()).sum();
        CHECK(std::abs(f.a.squaredNorm() - nuclear) < 1e-8);
        CHECK(std::abs(f.b.squaredNorm() - nuclear) < 1e-8);
        CHECK((f.a * f.b.transpose() - fit.estimate.matrix()).cwiseAbs().maxCoeff() <
              1e-8 * (nuclear + 1.0));
    }
}

TEST_CASE("global descent hook saw no violations in this suite") {
    CHECK(oracles::descent_monitor().fits.load() > 0);
    INFO(oracles::descent_monitor().first_message);
    CHECK(oracles::descent_monitor().violations.load() == 0);
}
