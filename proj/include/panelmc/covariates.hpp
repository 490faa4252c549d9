#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <iostream>
#include <optional>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/norms.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/soft_impute.hpp"

namespace panelmc {

/// Unit, time, and unit-time covariates. Any component may be absent. The
/// richer formulation with identity blocks is obtained by the caller passing
/// identity-augmented X and Z; the solver treats H generically.
struct CovariateSet {
    std::optional<Matrix> x;          // N x P unit covariates
    std::optional<Matrix> z;          // T x Q time covariates
    std::vector<Matrix> v;            // J matrices, each N x T

    Index p() const { return x ? x->cols() : 0; }
    Index q() const { return z ? z->cols() : 0; }
    Index j() const { return static_cast<Index>(v.size()); }

    void validate(Index n_units, Index n_periods) const {
        if (x && x->rows() != n_units)
            throw DimensionError("CovariateSet: X must have N rows");
        if (z && z->rows() != n_periods)
            throw DimensionError("CovariateSet: Z must have T rows");
        if ((x && !x->allFinite()) || (z && !z->allFinite()))
            throw InvalidSpecError("CovariateSet: covariates must be finite");
        for (const Matrix& vj : v) {
            if (vj.rows() != n_units || vj.cols() != n_periods)
                throw DimensionError("CovariateSet: each V_j must be N x T");
            if (!vj.allFinite())
                throw InvalidSpecError("CovariateSet: covariates must be finite");
        }
    }

    bool empty() const { return !x && !z && v.empty(); }
};

struct CovariateConfig {
    double tolerance = 1e-6;   // relative change of the joint objective
    int max_cycles = 500;
    bool unit_effects = true;  // estimate gamma
    bool time_effects = true;  // estimate delta

    void validate() const {
        if (tolerance <= 0.0)
            throw InvalidSpecError("CovariateConfig: tolerance must be > 0");
        if (max_cycles < 1)
            throw InvalidSpecError("CovariateConfig: max_cycles must be >= 1");
    }
};

/// Fit of the covariate model Y = L + X H Z^T + gamma 1^T + 1 delta^T + V
/// beta + noise. The unit effects gamma sum to zero; the grand mean is
/// absorbed into delta, so the reconstruction L + XHZ^T + gamma_i + delta_t +
/// V_it beta uses every field exactly once.
struct CovariateFit {
    PanelMatrix l_hat;
    Matrix h_hat;   // P x Q
    Vector gamma;   // N, sums to zero
    Vector delta;   // T, carries the level
    Vector beta;    // J
    double lambda_l = 0.0;
    double lambda_h = 0.0;
    std::vector<double> objective_trace;  // one entry per block update
    int cycles_used = 0;
    bool converged = false;

    double fitted(const CovariateSet& cov, Index i, Index t) const {
        double v = l_hat(i, t) + gamma(i) + delta(t);
        if (cov.x && cov.z) v += cov.x->row(i).dot(h_hat * cov.z->row(t).transpose());
        for (Index jj = 0; jj < cov.j(); ++jj)
            v += beta(jj) * cov.v[static_cast<size_t>(jj)](i, t);
        return v;
    }
};

namespace detail {

struct CovState {
    Matrix l;
    Matrix h;
    Vector gamma, delta, beta;
    double mu = 0.0;  // internal intercept, folded into delta at the end
};

inline Matrix cov_linear_part(const CovariateSet& cov, const CovState& s,
                              Index n, Index t_len) {
    Matrix lin = Matrix::Zero(n, t_len);
    if (cov.x && cov.z && s.h.size() > 0) lin += *cov.x * s.h * cov.z->transpose();
    for (Index jj = 0; jj < cov.j(); ++jj)
        lin += s.beta(jj) * cov.v[static_cast<size_t>(jj)];
    lin.colwise() += s.gamma;
    lin.rowwise() += s.delta.transpose();
    lin.array() += s.mu;
    return lin;
}

inline double cov_objective(const Matrix& y, const Matrix& indicator,
                            const CovariateSet& cov, const CovState& s,
                            double lambda_l, double lambda_h, Index n_obs) {
    const Matrix fitted = s.l + cov_linear_part(cov, s, y.rows(), y.cols());
    const double quad =
        ((y - fitted).cwiseProduct(indicator)).squaredNorm() /
        static_cast<double>(n_obs);
    double penalty = 0.0;
    if (lambda_l > 0.0) penalty += lambda_l * singular_values(s.l).sum();
    if (lambda_h > 0.0 && s.h.size() > 0) penalty += lambda_h * s.h.cwiseAbs().sum();
    return quad + penalty;
}

}  // namespace detail

/// Joint convex program with covariates and two-way fixed effects: block
/// coordinate descent over (gamma, delta, beta, H, L). The effect updates are
/// closed-form least squares on observed cells, H entries are soft-thresholded
/// at lambda_h*|O|/2, and L takes one singular-value shrinkage step at
/// lambda_l*|O|/2 per cycle. The objective never increases across block
/// updates.
inline CovariateFit fit_covariate_model(const PanelMatrix& y,
                                        const ObservationMask& o,
                                        const CovariateSet& cov, double lambda_l,
                                        double lambda_h,
                                        const CovariateConfig& cfg = {}) {
    cfg.validate();
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_covariate_model");
    cov.validate(y.n_units(), y.n_periods());
    if (lambda_l < 0.0 || lambda_h < 0.0)
        throw InvalidSpecError("fit_covariate_model: penalties must be >= 0");
    const Index n = y.n_units();
    const Index t_len = y.n_periods();
    const Index n_obs = o.n_observed();
    if (n_obs == 0) throw MaskError("fit_covariate_model: empty observation set");

    const Matrix indicator = o.indicator();
    const Matrix y_obs = y.matrix().cwiseProduct(indicator);
    const Vector row_counts = indicator.rowwise().sum();
    const Vector col_counts = indicator.colwise().sum();
    const bool has_h = cov.x && cov.z && cov.p() > 0 && cov.q() > 0;
    const double h_threshold = lambda_h * static_cast<double>(n_obs) / 2.0;
    const double l_threshold = lambda_l * static_cast<double>(n_obs) / 2.0;

    // Masked basis Gram entries q_pq = sum_O X_ip^2 Z_tq^2 for the H updates.
    Matrix h_gram;
    if (has_h) {
        h_gram.resize(cov.p(), cov.q());
        const Matrix x_sq = cov.x->array().square().matrix();
        const Matrix z_sq = cov.z->array().square().matrix();
        h_gram = x_sq.transpose() * indicator * z_sq;
    }

    // beta design Gram over observed cells (fixed through the iteration)
    Matrix v_gram;
    if (cov.j() > 0) {
        v_gram.resize(cov.j(), cov.j());
        for (Index a = 0; a < cov.j(); ++a)
            for (Index b = a; b < cov.j(); ++b) {
                const double g = (cov.v[static_cast<size_t>(a)]
                                      .cwiseProduct(cov.v[static_cast<size_t>(b)])
                                      .cwiseProduct(indicator))
                                     .sum();
                v_gram(a, b) = g;
                v_gram(b, a) = g;
            }
    }

    detail::CovState s;
    s.l = y_obs;  // same initialization as the covariate-free estimator
    s.h = has_h ? Matrix::Zero(cov.p(), cov.q()) : Matrix();
    s.gamma = Vector::Zero(n);
    s.delta = Vector::Zero(t_len);
    s.beta = Vector::Zero(cov.j());

    CovariateFit out;
    out.lambda_l = lambda_l;
    out.lambda_h = lambda_h;
    out.objective_trace.push_back(
        detail::cov_objective(y.matrix(), indicator, cov, s, lambda_l, lambda_h, n_obs));

    auto record = [&] {
        out.objective_trace.push_back(detail::cov_objective(
            y.matrix(), indicator, cov, s, lambda_l, lambda_h, n_obs));
    };

    double prev_objective = out.objective_trace.front();
    bool warned_collinear = false;
    for (int cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
        out.cycles_used = cycle;
        // residual of everything except the component being updated
        if (cfg.unit_effects) {
            const Matrix rest = s.l + detail::cov_linear_part(cov, s, n, t_len);
            const Matrix r = (y.matrix() - rest).cwiseProduct(indicator);
            for (Index i = 0; i < n; ++i)
                if (row_counts(i) > 0)
                    s.gamma(i) += r.row(i).sum() / row_counts(i);
            const double mean_gamma = s.gamma.mean();
            s.gamma.array() -= mean_gamma;
            s.mu += mean_gamma;
            record();
        }
        if (cfg.time_effects) {
            const Matrix rest = s.l + detail::cov_linear_part(cov, s, n, t_len);
            const Matrix r = (y.matrix() - rest).cwiseProduct(indicator);
            for (Index t = 0; t < t_len; ++t)
                if (col_counts(t) > 0)
                    s.delta(t) += r.col(t).sum() / col_counts(t);
            const double mean_delta = s.delta.mean();
            s.delta.array() -= mean_delta;
            s.mu += mean_delta;
            record();
        }
        if (cov.j() > 0) {
            s.beta.setZero();  // rest excludes the V beta term
            const Matrix rest = s.l + detail::cov_linear_part(cov, s, n, t_len);
            const Matrix r = (y.matrix() - rest).cwiseProduct(indicator);
            Vector v_rhs(cov.j());
            for (Index jj = 0; jj < cov.j(); ++jj)
                v_rhs(jj) = (cov.v[static_cast<size_t>(jj)].cwiseProduct(r)).sum();
            Eigen::ColPivHouseholderQR<Matrix> qr(v_gram);
            qr.setThreshold(1e-12);
            if (qr.rank() < cov.j() && !warned_collinear) {
                std::cerr << "panelmc: collinear unit-time covariates, dropping "
                          << (cov.j() - qr.rank()) << " column(s)\n";
                warned_collinear = true;
            }
            s.beta = qr.solve(v_rhs);
            record();
        }
        if (has_h) {
            // cyclic coordinate descent to an interior fixed point of the H block
            Matrix resid =
                (y.matrix() - s.l - detail::cov_linear_part(cov, s, n, t_len))
                    .cwiseProduct(indicator);
            for (int pass = 0; pass < 100; ++pass) {
                double max_move = 0.0;
                for (Index pp = 0; pp < cov.p(); ++pp)
                    for (Index qq = 0; qq < cov.q(); ++qq) {
                        const double quad = h_gram(pp, qq);
                        if (quad == 0.0) continue;
                        const Matrix basis =
                            (cov.x->col(pp) * cov.z->col(qq).transpose())
                                .cwiseProduct(indicator);
                        const double corr =
                            (basis.cwiseProduct(resid)).sum() + s.h(pp, qq) * quad;
                        const double next =
                            std::copysign(std::max(std::abs(corr) - h_threshold, 0.0),
                                          corr) /
                            quad;
                        const double move = next - s.h(pp, qq);
                        if (move != 0.0) {
                            resid -= move * basis;
                            s.h(pp, qq) = next;
                            max_move = std::max(max_move, std::abs(move));
                        }
                    }
                if (max_move < 1e-12) break;
            }
            record();
        }
        {
            const Matrix rest = detail::cov_linear_part(cov, s, n, t_len);
            const Matrix target = (y.matrix() - rest).cwiseProduct(indicator) +
                                  (s.l - s.l.cwiseProduct(indicator));
            s.l = shrink(target, l_threshold);
            record();
        }

        const double objective = out.objective_trace.back();
        const double rel =
            std::abs(prev_objective - objective) / std::max(1.0, std::abs(prev_objective));
        prev_objective = objective;
        if (rel < cfg.tolerance) {
            out.converged = true;
            break;
        }
    }

    out.l_hat = PanelMatrix(s.l);
    out.h_hat = s.h;
    out.gamma = s.gamma;
    out.delta = s.delta;
    out.delta.array() += s.mu;  // level lives in delta
    out.beta = s.beta;
    return out;
}

// ---------------------------------------------------------------------------
// Propensity weighting
// ---------------------------------------------------------------------------

/// Low-rank propensity estimate with entries clipped away from 0 and 1 so the
/// odds weights e/(1-e) stay bounded.
struct PropensityModel {
    PanelMatrix e_hat;
    std::pair<double, double> clip_bounds{0.01, 0.99};
};

/// Estimates the treatment propensity matrix E from the binary assignment W
/// by one fully observed nuclear-norm fit: E = shrink_{lambda*NT/2}(W),
/// clipped to the bounds.
inline PropensityModel estimate_propensity(const PanelMatrix& w, double lambda,
                                           std::pair<double, double> clip_bounds = {
                                               0.01, 0.99}) {
    if (lambda < 0.0)
        throw InvalidSpecError("estimate_propensity: lambda must be >= 0");
    if (!(clip_bounds.first > 0.0 && clip_bounds.first <= 0.5 &&
          clip_bounds.second >= 0.5 && clip_bounds.second < 1.0))
        throw InvalidSpecError(
            "estimate_propensity: clip bounds must lie in (0,0.5] x [0.5,1)");
    for (Index i = 0; i < w.n_units(); ++i)
        for (Index t = 0; t < w.n_periods(); ++t)
            if (w(i, t) != 0.0 && w(i, t) != 1.0)
                throw InvalidSpecError("estimate_propensity: W must be binary");
    const double nt = static_cast<double>(w.n_units() * w.n_periods());
    Matrix e = shrink(w.matrix(), lambda * nt / 2.0);
    e = e.cwiseMax(clip_bounds.first).cwiseMin(clip_bounds.second);
    PropensityModel model;
    model.e_hat = PanelMatrix(std::move(e));
    model.clip_bounds = clip_bounds;
    return model;
}

/// Propensity-weighted nuclear-norm fit: minimizes
/// (1/|O|) sum_O w_it (Y_it - L_it)^2 + lambda*||L||_* with w = e/(1-e),
/// by proximal gradient steps sized by the largest weight.
inline FitResult fit_weighted(const PanelMatrix& y, const ObservationMask& o,
                              const PropensityModel& prop, double lambda_l,
                              const McnnmConfig& cfg) {
    cfg.validate();
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_weighted");
    require_same_shape(prop.e_hat, o.n_units(), o.n_periods(), "fit_weighted");
    if (lambda_l < 0.0)
        throw InvalidSpecError("fit_weighted: lambda must be >= 0");
    const Index n_obs = o.n_observed();
    if (n_obs == 0) throw MaskError("fit_weighted: empty observation set");

    const Matrix indicator = o.indicator();
    const Matrix weights =
        (prop.e_hat.matrix().array() / (1.0 - prop.e_hat.matrix().array()))
            .matrix()
            .cwiseProduct(indicator);
    double w_max = 0.0;
    for (const auto& [i, t] : o.observed_cells())
        w_max = std::max(w_max, weights(i, t));
    if (!(w_max > 0.0))
        throw InvalidSpecError("fit_weighted: all weights are zero");

    const Matrix y_obs = y.matrix().cwiseProduct(indicator);
    const double threshold = lambda_l * static_cast<double>(n_obs) / (2.0 * w_max);

    auto objective = [&](const Matrix& l, double nuclear_l) {
        const Matrix r = (y_obs - l.cwiseProduct(indicator));
        return (weights.cwiseProduct(r).cwiseProduct(r)).sum() /
                   static_cast<double>(n_obs) +
               lambda_l * nuclear_l;
    };

    Matrix l = y_obs;
    FitResult out;
    out.lambda_used = lambda_l;
    out.objective_trace.push_back(
        objective(l, lambda_l > 0.0 ? singular_values(l).sum() : 0.0));
    out.iterations_used = 1;

    Vector last_singular;
    for (int k = 2; k <= cfg.max_iterations + 1; ++k) {
        const Matrix step =
            l + (weights.cwiseProduct(y_obs - l.cwiseProduct(indicator))) / w_max;
        SvdTriple svd = svd_thin(step);
        last_singular = (svd.singular_values.array() - threshold).max(0.0);
        Matrix l_next = svd.left * last_singular.asDiagonal() * svd.right.transpose();
        out.objective_trace.push_back(objective(l_next, last_singular.sum()));
        out.iterations_used = k;
        const double change = (l_next - l).norm() / std::max(1.0, l.norm());
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
    if (cfg.clip_max) l = l.cwiseMax(-*cfg.clip_max).cwiseMin(*cfg.clip_max);
    out.estimate = PanelMatrix(std::move(l));
    notify_fit_observer(out);
    return out;
}

// ---------------------------------------------------------------------------
// Autocorrelated errors
// ---------------------------------------------------------------------------

/// AR(1) error covariance: Omega_ts = rho^|t-s| unless an explicit SPD Omega
/// is supplied.
struct ArSpec {
    double rho = 0.0;
    std::optional<Matrix> omega;

    Matrix build_omega(Index t_len) const {
        if (std::abs(rho) >= 1.0)
            throw InvalidSpecError("ArSpec: rho must lie in (-1, 1)");
        if (omega) {
            if (omega->rows() != t_len || omega->cols() != t_len)
                throw DimensionError("ArSpec: Omega must be T x T");
            if (!omega->isApprox(omega->transpose(), 1e-12))
                throw InvalidSpecError("ArSpec: Omega must be symmetric");
            return *omega;
        }
        Matrix om(t_len, t_len);
        for (Index t = 0; t < t_len; ++t)
            for (Index ss = 0; ss < t_len; ++ss)
                om(t, ss) = std::pow(rho, std::abs(static_cast<double>(t - ss)));
        return om;
    }
};

/// Lag-1 autocorrelation of residuals from a preliminary unweighted fit;
/// used when the caller wants rho estimated from the data.
inline double estimate_ar1_rho(const PanelMatrix& y, const ObservationMask& o,
                               const McnnmConfig& cfg) {
    const FitResult fit = fit_mcnnm(y, o, cfg);
    double num = 0.0, den = 0.0;
    for (Index i = 0; i < y.n_units(); ++i)
        for (Index t = 0; t + 1 < y.n_periods(); ++t)
            if (o.is_observed(i, t) && o.is_observed(i, t + 1)) {
                const double r0 = y(i, t) - fit.estimate(i, t);
                const double r1 = y(i, t + 1) - fit.estimate(i, t + 1);
                num += r0 * r1;
                den += r0 * r0;
            }
    if (den <= 0.0) return 0.0;
    return std::clamp(num / den, -0.99, 0.99);
}

/// Nuclear-norm fit under AR(1)-correlated errors: minimizes
/// (1/|O|) sum_i r_i Omega^{-1} r_i^T + lambda*||L||_* over the masked row
/// residuals r_i, by proximal gradient with step |O| / (2*sigma_max(Omega^{-1})).
inline FitResult fit_ar1(const PanelMatrix& y, const ObservationMask& o,
                         const ArSpec& ar, double lambda_l,
                         const McnnmConfig& cfg) {
    cfg.validate();
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_ar1");
    if (lambda_l < 0.0) throw InvalidSpecError("fit_ar1: lambda must be >= 0");
    const Index n_obs = o.n_observed();
    if (n_obs == 0) throw MaskError("fit_ar1: empty observation set");

    const Matrix omega = ar.build_omega(y.n_periods());
    Eigen::LLT<Matrix> llt(omega);
    if (llt.info() != Eigen::Success)
        throw InvalidSpecError("fit_ar1: Omega is not positive definite");
    const Matrix omega_inv =
        llt.solve(Matrix::Identity(y.n_periods(), y.n_periods()));
    const double sigma_max = singular_values(omega_inv)(0);

    const Matrix indicator = o.indicator();
    const Matrix y_obs = y.matrix().cwiseProduct(indicator);
    const double threshold = lambda_l * static_cast<double>(n_obs) / (2.0 * sigma_max);

    auto objective = [&](const Matrix& l, double nuclear_l) {
        const Matrix r = (y_obs - l.cwiseProduct(indicator));
        return (r.cwiseProduct(r * omega_inv)).sum() / static_cast<double>(n_obs) +
               lambda_l * nuclear_l;
    };

    Matrix l = y_obs;
    FitResult out;
    out.lambda_used = lambda_l;
    out.objective_trace.push_back(
        objective(l, lambda_l > 0.0 ? singular_values(l).sum() : 0.0));
    out.iterations_used = 1;

    Vector last_singular;
    for (int k = 2; k <= cfg.max_iterations + 1; ++k) {
        const Matrix masked_resid = y_obs - l.cwiseProduct(indicator);
        const Matrix step =
            l + (masked_resid * omega_inv).cwiseProduct(indicator) / sigma_max;
        SvdTriple svd = svd_thin(step);
        last_singular = (svd.singular_values.array() - threshold).max(0.0);
        Matrix l_next = svd.left * last_singular.asDiagonal() * svd.right.transpose();
        out.objective_trace.push_back(objective(l_next, last_singular.sum()));
        out.iterations_used = k;
        const double change = (l_next - l).norm() / std::max(1.0, l.norm());
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
    if (cfg.clip_max) l = l.cwiseMax(-*cfg.clip_max).cwiseMin(*cfg.clip_max);
    out.estimate = PanelMatrix(std::move(l));
    notify_fit_observer(out);
    return out;
}

}  // namespace panelmc
