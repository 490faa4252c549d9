#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/norms.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/rng.hpp"

namespace panelmc {

/// Configuration for one nuclear-norm-penalized fit.
struct McnnmConfig {
    double lambda = 0.0;            // penalty weight on the nuclear norm
    double tolerance = 1e-6;        // relative Frobenius change for convergence
    int max_iterations = 500;
    std::optional<double> clip_max;  // optional max-norm bound on the estimate

    void validate() const {
        if (lambda < 0.0) throw InvalidSpecError("McnnmConfig: lambda must be >= 0");
        if (tolerance <= 0.0)
            throw InvalidSpecError("McnnmConfig: tolerance must be > 0");
        if (max_iterations < 1)
            throw InvalidSpecError("McnnmConfig: max_iterations must be >= 1");
        if (clip_max && *clip_max <= 0.0)
            throw InvalidSpecError("McnnmConfig: clip_max must be > 0");
    }
};

/// Result of a penalized fit: the estimate, its effective rank, and the
/// objective value of every iterate (nonincreasing along the iteration).
struct FitResult {
    PanelMatrix estimate;
    Index effective_rank = 0;
    std::vector<double> objective_trace;
    int iterations_used = 0;
    bool converged = false;
    double lambda_used = 0.0;
};

/// Observer invoked on every completed fit. Tests install a hook here to
/// assert invariants (monotone descent, factorization identities) globally.
/// Must be installed before any concurrent fitting starts and be thread-safe.
inline std::function<void(const FitResult&)>& fit_observer() {
    static std::function<void(const FitResult&)> hook;
    return hook;
}

inline void notify_fit_observer(const FitResult& fit) {
    if (fit_observer()) fit_observer()(fit);
}

/// Singular value shrinkage: replace each sigma_i by max(sigma_i - threshold, 0).
inline Matrix shrink(const Matrix& a, double threshold) {
    if (threshold < 0.0) throw InvalidSpecError("shrink: threshold must be >= 0");
    if (threshold == 0.0) return a;
    SvdTriple svd = svd_thin(a);
    Vector s = (svd.singular_values.array() - threshold).max(0.0);
    return svd.left * s.asDiagonal() * svd.right.transpose();
}

inline PanelMatrix shrink(const PanelMatrix& a, double threshold) {
    return PanelMatrix(shrink(a.matrix(), threshold));
}

/// Smallest lambda whose fixed point from the P_O(Y) initialization is the
/// zero matrix: 2 * sigma_1(P_O(Y)) / |O|. Returns 0 for all-zero observed
/// data (degenerate).
inline double lambda_max(const PanelMatrix& y, const ObservationMask& o) {
    require_same_shape(y, o.n_units(), o.n_periods(), "lambda_max");
    if (o.n_observed() == 0) throw MaskError("lambda_max: empty observation set");
    const Matrix py = y.matrix().cwiseProduct(o.indicator());
    if (py.isZero(0.0)) {
        std::cerr << "panelmc: lambda_max is degenerate (observed data all zero)\n";
        return 0.0;
    }
    const Vector s = singular_values(py);
    return 2.0 * s(0) / static_cast<double>(o.n_observed());
}

namespace detail {

// Objective of Eq-style program: (1/|O|)*||P_O(Y - L)||_F^2 + lambda*||L||_*.
inline double mcnnm_objective(const Matrix& y_obs, const Matrix& indicator,
                              const Matrix& l, double lambda, double nuclear_l,
                              Index n_obs) {
    const Matrix resid = (y_obs - l.cwiseProduct(indicator));
    return resid.squaredNorm() / static_cast<double>(n_obs) + lambda * nuclear_l;
}

}  // namespace detail

/// SOFT-IMPUTE iteration for the nuclear-norm matrix completion estimator:
///   L_{k+1} = shrink_{lambda*|O|/2}( P_O(Y) + P_O_perp(L_k) ),
/// started from L_1 = P_O(Y) (or a caller-supplied warm start), run until the
/// relative Frobenius change drops below cfg.tolerance. Entries of Y off the
/// observation set are ignored.
inline FitResult fit_mcnnm(const PanelMatrix& y, const ObservationMask& o,
                           const McnnmConfig& cfg,
                           const Matrix* warm_start = nullptr) {
    cfg.validate();
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_mcnnm");
    const Index n_obs = o.n_observed();
    if (n_obs == 0) throw MaskError("fit_mcnnm: empty observation set");

    const Matrix indicator = o.indicator();
    const Matrix y_obs = y.matrix().cwiseProduct(indicator);
    const double threshold = cfg.lambda * static_cast<double>(n_obs) / 2.0;

    Matrix l = warm_start ? *warm_start : y_obs;
    if (warm_start && (l.rows() != y.n_units() || l.cols() != y.n_periods()))
        throw DimensionError("fit_mcnnm: warm start has wrong shape");

    FitResult out;
    out.lambda_used = cfg.lambda;
    const double initial_nuclear =
        cfg.lambda > 0.0 ? singular_values(l).sum() : 0.0;
    out.objective_trace.push_back(
        detail::mcnnm_objective(y_obs, indicator, l, cfg.lambda, initial_nuclear,
                                n_obs));
    out.iterations_used = 1;

    Vector last_singular;
    for (int k = 2; k <= cfg.max_iterations + 1; ++k) {
        const Matrix target = y_obs + (l - l.cwiseProduct(indicator));
        SvdTriple svd = svd_thin(target);
        last_singular = (svd.singular_values.array() - threshold).max(0.0);
        Matrix l_next =
            svd.left * last_singular.asDiagonal() * svd.right.transpose();

        out.objective_trace.push_back(detail::mcnnm_objective(
            y_obs, indicator, l_next, cfg.lambda, last_singular.sum(), n_obs));
        out.iterations_used = k;

        const double change =
            (l_next - l).norm() / std::max(1.0, l.norm());
        l = std::move(l_next);
        if (change < cfg.tolerance) {
            out.converged = true;
            break;
        }
    }

    if (last_singular.size() == 0) last_singular = singular_values(l);
    const double top = last_singular.size() > 0 ? last_singular(0) : 0.0;
    out.effective_rank =
        top > 0.0 ? (last_singular.array() > kRankTolerance * top).count() : 0;

    if (cfg.clip_max)
        l = l.cwiseMax(-*cfg.clip_max).cwiseMin(*cfg.clip_max);
    out.estimate = PanelMatrix(std::move(l));
    notify_fit_observer(out);
    return out;
}

/// Descending lambda grid: n-1 points geometrically spaced from lambda_max
/// down to floor_ratio * lambda_max, with 0 appended last.
inline std::vector<double> default_lambda_grid(const PanelMatrix& y,
                                               const ObservationMask& o,
                                               int n_points = 30,
                                               double floor_ratio = 1e-4) {
    if (n_points < 2)
        throw InvalidSpecError("default_lambda_grid: need at least 2 points");
    const double lmax = lambda_max(y, o);
    if (lmax <= 0.0)
        throw InvalidSpecError("default_lambda_grid: degenerate lambda_max");
    std::vector<double> grid;
    grid.reserve(static_cast<size_t>(n_points));
    const double ratio =
        n_points > 2 ? std::pow(floor_ratio, 1.0 / (n_points - 2)) : 1.0;
    double lam = lmax;
    for (int i = 0; i < n_points - 1; ++i) {
        grid.push_back(lam);
        lam *= ratio;
    }
    grid.push_back(0.0);
    return grid;
}

/// Cross-validation configuration: K seeded subsets of O and a strictly
/// descending lambda grid.
struct CvConfig {
    int n_folds = 5;
    std::vector<double> lambda_grid;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_folds < 1) throw InvalidSpecError("CvConfig: n_folds must be >= 1");
        if (lambda_grid.empty())
            throw InvalidSpecError("CvConfig: lambda grid must be nonempty");
        for (size_t j = 0; j < lambda_grid.size(); ++j) {
            if (lambda_grid[j] < 0.0)
                throw InvalidSpecError("CvConfig: lambdas must be >= 0");
            if (j > 0 && lambda_grid[j] >= lambda_grid[j - 1])
                throw InvalidSpecError("CvConfig: lambda grid must be strictly descending");
        }
    }
};

struct CvResult {
    double lambda_star = 0.0;
    std::vector<double> lambda_grid;
    std::vector<double> mean_holdout_mse;  // aligned with lambda_grid
    Index fold_cardinality = 0;            // |O_k| = floor(|O|^2 / NT)
    Index holdout_cardinality = 0;         // |O| - |O_k|
};

/// Selects lambda by K-fold cross-validation. Each fold fits on a random
/// subset O_k of O with cardinality floor(|O|^2 / NT) (so the observed
/// fraction inside the fold matches the sample's) and scores squared error on
/// O \ O_k. The lambda sweep inside a fold is warm-started from the previous
/// lambda's solution; folds are independent and may run in parallel without
/// changing the result. Ties are broken toward the smallest lambda.
inline CvResult cross_validate(const PanelMatrix& y, const ObservationMask& o,
                               const CvConfig& cv, const McnnmConfig& cfg,
                               int n_threads = 1) {
    cv.validate();
    cfg.validate();
    require_same_shape(y, o.n_units(), o.n_periods(), "cross_validate");
    const Index n_obs = o.n_observed();
    const Index n_total = o.n_units() * o.n_periods();
    if (n_obs >= n_total)
        throw MaskError("cross_validate: fully observed panel, nothing to hold out");
    const Index fold_size = (n_obs * n_obs) / n_total;
    if (fold_size < 1)
        throw MaskError("cross_validate: fold cardinality floor(|O|^2/NT) is zero");

    const size_t n_lambda = cv.lambda_grid.size();
    std::vector<std::vector<double>> fold_mse(
        static_cast<size_t>(cv.n_folds), std::vector<double>(n_lambda, 0.0));

    auto run_fold = [&](int k) {
        Rng rng(cv.seed, static_cast<std::uint64_t>(k));
        const auto pick = rng.sample_without_replacement(n_obs, fold_size);
        std::vector<CellIndex> train_cells;
        train_cells.reserve(pick.size());
        for (Index idx : pick)
            train_cells.push_back(o.observed_cells()[static_cast<size_t>(idx)]);
        const ObservationMask train =
            ObservationMask::from_cells(o.n_units(), o.n_periods(), train_cells);

        // holdout = O \ O_k
        std::vector<CellIndex> holdout;
        holdout.reserve(static_cast<size_t>(n_obs - fold_size));
        for (const auto& cell : o.observed_cells())
            if (!train.is_observed(cell.first, cell.second)) holdout.push_back(cell);

        McnnmConfig fold_cfg = cfg;
        Matrix warm;
        bool have_warm = false;
        for (size_t j = 0; j < n_lambda; ++j) {
            fold_cfg.lambda = cv.lambda_grid[j];
            FitResult fit =
                fit_mcnnm(y, train, fold_cfg, have_warm ? &warm : nullptr);
            warm = fit.estimate.matrix();
            have_warm = true;
            double sse = 0.0;
            for (const auto& [i, t] : holdout) {
                const double e = y(i, t) - fit.estimate(i, t);
                sse += e * e;
            }
            fold_mse[static_cast<size_t>(k)][j] =
                sse / static_cast<double>(holdout.size());
        }
    };

    if (n_threads <= 1 || cv.n_folds == 1) {
        for (int k = 0; k < cv.n_folds; ++k) run_fold(k);
    } else {
        std::vector<std::thread> workers;
        std::atomic<int> next{0};
        const int n_workers = std::min(n_threads, cv.n_folds);
        for (int w = 0; w < n_workers; ++w)
            workers.emplace_back([&] {
                for (int k = next.fetch_add(1); k < cv.n_folds;
                     k = next.fetch_add(1))
                    run_fold(k);
            });
        for (auto& t : workers) t.join();
    }

    CvResult out;
    out.fold_cardinality = fold_size;
    out.holdout_cardinality = n_obs - fold_size;
    out.lambda_grid = cv.lambda_grid;
    out.mean_holdout_mse.assign(n_lambda, 0.0);
    for (int k = 0; k < cv.n_folds; ++k)
        for (size_t j = 0; j < n_lambda; ++j)
            out.mean_holdout_mse[j] += fold_mse[static_cast<size_t>(k)][j];
    for (double& v : out.mean_holdout_mse) v /= cv.n_folds;

    // smallest lambda among the minimizers
    size_t best = 0;
    for (size_t j = 0; j < n_lambda; ++j)
        if (out.mean_holdout_mse[j] <= out.mean_holdout_mse[best]) best = j;
    out.lambda_star = cv.lambda_grid[best];
    return out;
}

/// Rank factorization L_hat = A * B^T with A = S * Sigma^{1/2} and
/// B = R * Sigma^{1/2}, truncated at the effective rank. Both factors carry
/// half the nuclear norm: ||A||_F^2 = ||B||_F^2 = ||L_hat||_*.
struct FactorPair {
    Matrix a;  // N x R_hat
    Matrix b;  // T x R_hat
};

inline FactorPair factorize(const FitResult& fit) {
    const Matrix& l = fit.estimate.matrix();
    SvdTriple svd = svd_thin(l);
    const Index r = svd.effective_rank();
    FactorPair out;
    out.a.resize(l.rows(), r);
    out.b.resize(l.cols(), r);
    for (Index j = 0; j < r; ++j) {
        const double root = std::sqrt(svd.singular_values(j));
        out.a.col(j) = svd.left.col(j) * root;
        out.b.col(j) = svd.right.col(j) * root;
    }
    return out;
}

}  // namespace panelmc
