#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "panelmc/baselines.hpp"
#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/soft_impute.hpp"
#include "panelmc/synthetic.hpp"

namespace panelmc {

/// Root mean squared error over the missing cells only.
inline double rmse_on_missing(const PanelMatrix& estimate, const PanelMatrix& truth,
                              const ObservationMask& o) {
    require_same_shape(estimate, o.n_units(), o.n_periods(), "rmse_on_missing");
    require_same_shape(truth, o.n_units(), o.n_periods(), "rmse_on_missing");
    const Index m = o.n_missing();
    if (m == 0) throw MaskError("rmse_on_missing: no missing cells to score");
    double sse = 0.0;
    for (Index i = 0; i < o.n_units(); ++i)
        for (Index t = 0; t < o.n_periods(); ++t)
            if (!o.is_observed(i, t)) {
                const double e = estimate(i, t) - truth(i, t);
                sse += e * e;
            }
    return std::sqrt(sse / static_cast<double>(m));
}

/// Result of one estimator on a single replication mask.
struct ReplicationOutcome {
    bool skipped = false;
    std::string skip_reason;
    double rmse = 0.0;
    std::optional<Index> effective_rank;  // mc-nnm only
    std::optional<double> lambda_used;    // mc-nnm only
};

struct EstimatorReport {
    std::string name;
    double mean_rmse = 0.0;
    double se = 0.0;  // dispersion of per-replication RMSEs / sqrt(n_reps)
    int n_reps = 0;   // replications actually evaluated
    int skipped = 0;
    std::vector<ReplicationOutcome> replications;
};

struct EvalReport {
    std::vector<EstimatorReport> estimators;
    int replications = 0;
    std::uint64_t seed = 0;
};

/// Imputes the missing cells of y under the mask with the selected estimator.
/// Only observed cells of y influence the estimate. cv_seed drives the
/// lambda cross-validation subsets for mc-nnm.
inline PanelMatrix impute_with(const EstimatorSpec& spec, const PanelMatrix& y,
                               const ObservationMask& o, std::uint64_t cv_seed,
                               ReplicationOutcome* info = nullptr) {
    spec.validate();
    using Kind = EstimatorSpec::Kind;
    switch (spec.kind) {
        case Kind::did:
            return fit_did(y, o).imputed;
        case Kind::hr:
            return fit_horizontal(y, o);
        case Kind::vt:
            return fit_vertical(y, o);
        case Kind::hr_en:
            return fit_hr_en(y, o, *spec.en_config);
        case Kind::vt_en:
            return fit_vt_en(y, o, *spec.en_config);
        case Kind::sc_adh:
            return fit_sc_adh(y, o).imputed;
        case Kind::mc_nnm: {
            McnnmConfig cfg;
            if (spec.lambda) {
                cfg.lambda = *spec.lambda;
            } else {
                CvConfig cv = spec.cv.value_or(CvConfig{});
                if (cv.lambda_grid.empty())
                    cv.lambda_grid = default_lambda_grid(y, o);
                cv.seed = cv_seed;
                const CvResult sel = cross_validate(y, o, cv, cfg);
                cfg.lambda = sel.lambda_star;
            }
            const FitResult fit = fit_mcnnm(y, o, cfg);
            if (info) {
                info->effective_rank = fit.effective_rank;
                info->lambda_used = fit.lambda_used;
            }
            // observed cells pass through, missing cells take the fit
            Matrix imputed = y.matrix();
            for (Index i = 0; i < o.n_units(); ++i)
                for (Index t = 0; t < o.n_periods(); ++t)
                    if (!o.is_observed(i, t)) imputed(i, t) = fit.estimate(i, t);
            return PanelMatrix(std::move(imputed));
        }
    }
    throw InvalidSpecError("impute_with: unknown estimator kind");
}

/// The pseudo-treatment evaluation protocol: hide cells of a fully observed
/// panel according to the plan, impute them with every estimator, and score
/// each against the held-back truth. Estimators that are infeasible on a
/// given mask are recorded as skipped, never fatal. Replications may run in
/// parallel; per-replication seeds derive from (plan.seed, replication), so
/// thread count never changes the report.
inline EvalReport run_comparison(const PanelMatrix& y, const PseudoTreatmentPlan& plan,
                                 const std::vector<EstimatorSpec>& estimators,
                                 int n_threads = 1) {
    if (estimators.empty())
        throw InvalidSpecError("run_comparison: no estimators selected");
    for (const auto& e : estimators) e.validate();
    const auto masks = make_pseudo_masks(plan, y.n_units(), y.n_periods());
    const int n_reps = plan.replications;
    const int n_est = static_cast<int>(estimators.size());

    std::vector<std::vector<ReplicationOutcome>> grid(
        static_cast<size_t>(n_est),
        std::vector<ReplicationOutcome>(static_cast<size_t>(n_reps)));

    auto run_rep = [&](int rep) {
        const ObservationMask& mask = masks[static_cast<size_t>(rep)];
        for (int e = 0; e < n_est; ++e) {
            ReplicationOutcome& cell = grid[static_cast<size_t>(e)][static_cast<size_t>(rep)];
            if (mask.n_missing() == 0) {
                cell.skipped = true;
                cell.skip_reason = "mask has no missing cells";
                continue;
            }
            const std::uint64_t cv_seed =
                plan.seed ^ (0x51ed270b9f0aabcdULL + 0x9e3779b97f4a7c15ULL *
                                 (static_cast<std::uint64_t>(rep) * 64 + e));
            try {
                const PanelMatrix imputed =
                    impute_with(estimators[static_cast<size_t>(e)], y, mask, cv_seed, &cell);
                cell.rmse = rmse_on_missing(imputed, y, mask);
            } catch (const InfeasibleError& err) {
                cell.skipped = true;
                cell.skip_reason = err.what();
            } catch (const IllPosedError& err) {
                cell.skipped = true;
                cell.skip_reason = err.what();
            }
        }
    };

    if (n_threads <= 1 || n_reps == 1) {
        for (int rep = 0; rep < n_reps; ++rep) run_rep(rep);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        const int n_workers = std::min(n_threads, n_reps);
        for (int w = 0; w < n_workers; ++w)
            workers.emplace_back([&] {
                for (int rep = next.fetch_add(1); rep < n_reps; rep = next.fetch_add(1))
                    run_rep(rep);
            });
        for (auto& t : workers) t.join();
    }

    EvalReport report;
    report.replications = n_reps;
    report.seed = plan.seed;
    for (int e = 0; e < n_est; ++e) {
        EstimatorReport er;
        er.name = estimators[static_cast<size_t>(e)].name();
        er.replications = grid[static_cast<size_t>(e)];
        double sum = 0.0;
        for (const auto& cell : er.replications) {
            if (cell.skipped) {
                ++er.skipped;
            } else {
                sum += cell.rmse;
                ++er.n_reps;
            }
        }
        if (er.n_reps > 0) er.mean_rmse = sum / er.n_reps;
        if (er.n_reps > 1) {
            double ss = 0.0;
            for (const auto& cell : er.replications)
                if (!cell.skipped) {
                    const double d = cell.rmse - er.mean_rmse;
                    ss += d * d;
                }
            er.se = std::sqrt(ss / (er.n_reps - 1)) /
                    std::sqrt(static_cast<double>(er.n_reps));
        }
        report.estimators.push_back(std::move(er));
    }
    return report;
}

}  // namespace panelmc
