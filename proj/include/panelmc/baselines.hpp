#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/norms.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/soft_impute.hpp"

namespace panelmc {

// Designs with condition number above this are rejected by the unregularized
// regressions; the elastic-net variants are the sanctioned fallback.
inline constexpr double kConditionLimit = 1e12;

/// Regression weights: coefficients plus an unpenalized intercept. For the
/// synthetic control estimator the intercept is fixed at zero and the
/// coefficients lie on the probability simplex.
struct Weights {
    Vector coefficients;
    double intercept = 0.0;
    bool converged = true;
};

/// Elastic-net settings for the hr-en / vt-en estimators. When lambda is
/// absent it is chosen per regression by internal cross-validation over the
/// fully observed training data.
struct EnConfig {
    std::optional<double> lambda;
    double alpha = 0.5;  // l1 / l2 mixing
    int cv_folds = 5;
    int cv_grid_size = 12;

    void validate() const {
        if (lambda && *lambda < 0.0)
            throw InvalidSpecError("EnConfig: lambda must be >= 0");
        if (alpha < 0.0 || alpha > 1.0)
            throw InvalidSpecError("EnConfig: alpha must lie in [0, 1]");
    }
};

/// Tagged estimator selection used by the evaluation harness and the CLI.
struct EstimatorSpec {
    enum class Kind { did, hr, vt, hr_en, vt_en, sc_adh, mc_nnm };

    Kind kind = Kind::mc_nnm;
    std::optional<EnConfig> en_config;  // required iff kind is hr_en / vt_en
    std::optional<CvConfig> cv;         // mc_nnm lambda selection
    std::optional<double> lambda;       // mc_nnm fixed lambda (skips CV)

    void validate() const {
        const bool is_en = kind == Kind::hr_en || kind == Kind::vt_en;
        if (is_en && !en_config)
            throw InvalidSpecError("EstimatorSpec: hr-en/vt-en require en_config");
        if (en_config) en_config->validate();
    }

    std::string name() const {
        switch (kind) {
            case Kind::did: return "did";
            case Kind::hr: return "hr";
            case Kind::vt: return "vt";
            case Kind::hr_en: return "hr-en";
            case Kind::vt_en: return "vt-en";
            case Kind::sc_adh: return "sc-adh";
            case Kind::mc_nnm: return "mc-nnm";
        }
        return "?";
    }

    static EstimatorSpec parse(const std::string& label) {
        EstimatorSpec spec;
        if (label == "did") spec.kind = Kind::did;
        else if (label == "hr") spec.kind = Kind::hr;
        else if (label == "vt") spec.kind = Kind::vt;
        else if (label == "hr-en") { spec.kind = Kind::hr_en; spec.en_config = EnConfig{}; }
        else if (label == "vt-en") { spec.kind = Kind::vt_en; spec.en_config = EnConfig{}; }
        else if (label == "sc-adh") spec.kind = Kind::sc_adh;
        else if (label == "mc-nnm") spec.kind = Kind::mc_nnm;
        else throw InvalidSpecError("unknown estimator '" + label + "'");
        return spec;
    }
};

// ---------------------------------------------------------------------------
// Elastic net by coordinate descent
// ---------------------------------------------------------------------------

/// Minimizes (1/(2n))||y - b0 - Xw||^2 + lambda*(alpha*||w||_1 +
/// (1-alpha)/2*||w||^2) with an unpenalized intercept. Cyclic coordinate
/// descent; returns the best iterate with converged=false if the sweep budget
/// runs out.
inline Weights fit_elastic_net(const Matrix& design, const Vector& target,
                               double lambda, double alpha,
                               int max_sweeps = 100000, double tol = 1e-12) {
    if (design.rows() != target.size())
        throw DimensionError("fit_elastic_net: rows of design != length of target");
    if (alpha < 0.0 || alpha > 1.0)
        throw InvalidSpecError("fit_elastic_net: alpha must lie in [0, 1]");
    if (lambda < 0.0)
        throw InvalidSpecError("fit_elastic_net: lambda must be >= 0");
    const Index n = design.rows();
    const Index p = design.cols();
    const double dn = static_cast<double>(n);

    Vector col_sq(p);
    for (Index j = 0; j < p; ++j) col_sq(j) = design.col(j).squaredNorm() / dn;

    Weights w;
    w.coefficients = Vector::Zero(p);
    w.intercept = target.mean();
    Vector resid = target.array() - w.intercept;

    const double l1 = lambda * alpha;
    const double l2 = lambda * (1.0 - alpha);
    w.converged = false;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (Index j = 0; j < p; ++j) {
            if (col_sq(j) == 0.0) continue;  // degenerate column stays at zero
            const double old = w.coefficients(j);
            const double c = design.col(j).dot(resid) / dn + col_sq(j) * old;
            const double soft = std::copysign(std::max(std::abs(c) - l1, 0.0), c);
            const double next = soft / (col_sq(j) + l2);
            if (next != old) {
                resid += design.col(j) * (old - next);
                w.coefficients(j) = next;
                max_delta = std::max(max_delta, std::abs(next - old));
            }
        }
        const double shift = resid.mean();
        if (shift != 0.0) {
            w.intercept += shift;
            resid.array() -= shift;
            max_delta = std::max(max_delta, std::abs(shift));
        }
        if (max_delta < tol) {
            w.converged = true;
            break;
        }
    }
    return w;
}

namespace detail {

// Deterministic K-fold split by sample index; picks the lambda with the
// smallest mean validation error, smallest lambda on ties.
inline double en_cv_lambda(const Matrix& design, const Vector& target,
                           const EnConfig& en) {
    const Index n = design.rows();
    const double dn = static_cast<double>(n);
    const Vector centered = target.array() - target.mean();
    double lmax = 0.0;
    for (Index j = 0; j < design.cols(); ++j)
        lmax = std::max(lmax,
                        std::abs(design.col(j).dot(centered)) / dn);
    lmax /= std::max(en.alpha, 1e-3);
    if (lmax <= 0.0) return 0.0;

    const int n_grid = std::max(en.cv_grid_size, 2);
    std::vector<double> grid(static_cast<size_t>(n_grid));
    const double ratio = std::pow(1e-3, 1.0 / (n_grid - 1));
    double lam = lmax;
    for (int g = 0; g < n_grid; ++g) {
        grid[static_cast<size_t>(g)] = lam;
        lam *= ratio;
    }

    const int k_folds = static_cast<int>(std::min<Index>(en.cv_folds, n));
    if (k_folds < 2) return grid.back();

    double best_err = std::numeric_limits<double>::infinity();
    double best_lam = grid.back();
    for (double g : grid) {
        double err = 0.0;
        int used = 0;
        for (int f = 0; f < k_folds; ++f) {
            std::vector<Index> tr, te;
            for (Index i = 0; i < n; ++i)
                (static_cast<int>(i % k_folds) == f ? te : tr).push_back(i);
            if (tr.empty() || te.empty()) continue;
            Matrix Xtr(static_cast<Index>(tr.size()), design.cols());
            Vector ytr(static_cast<Index>(tr.size()));
            for (size_t r = 0; r < tr.size(); ++r) {
                Xtr.row(static_cast<Index>(r)) = design.row(tr[r]);
                ytr(static_cast<Index>(r)) = target(tr[r]);
            }
            const Weights w = fit_elastic_net(Xtr, ytr, g, en.alpha, 20000, 1e-10);
            double sse = 0.0;
            for (Index i : te) {
                const double e =
                    target(i) - w.intercept - design.row(i).dot(w.coefficients);
                sse += e * e;
            }
            err += sse / static_cast<double>(te.size());
            ++used;
        }
        if (used == 0) continue;
        err /= used;
        if (err < best_err || (err == best_err && g < best_lam)) {
            best_err = err;
            best_lam = g;
        }
    }
    return best_lam;
}

// OLS with intercept; rejects under-determined or ill-conditioned designs.
inline Weights ols_fit(const Matrix& design, const Vector& target,
                       const std::string& who, const std::string& fallback) {
    const Index n = design.rows();
    const Index p = design.cols();
    if (n <= p)
        throw IllPosedError(who + ": " + std::to_string(n) +
                            " training samples for " + std::to_string(p) +
                            " regressors plus intercept; use " + fallback);
    Matrix x(n, p + 1);
    x.col(0).setOnes();
    x.rightCols(p) = design;
    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    if (s(s.size() - 1) <= 0.0 || s(0) / s(s.size() - 1) > kConditionLimit)
        throw IllPosedError(who + ": design is collinear (condition number > 1e12); use " +
                            fallback);
    const Vector beta = svd.solve(target);
    Weights w;
    w.intercept = beta(0);
    w.coefficients = beta.tail(p);
    return w;
}

// Shared core of the horizontal regressions: for every column holding missing
// cells, group those cells by their row's observed support, regress the
// column on the support columns over rows observed there, and predict the
// group. Row-prefix masks (block, staggered) make the groups cohorts by
// adoption time; the transpose of this routine is the vertical regression.
template <class FitPredict>
inline Matrix impute_columnwise(const PanelMatrix& y, const ObservationMask& o,
                                FitPredict&& fit_predict) {
    const Index n = y.n_units();
    const Index t_len = y.n_periods();
    Matrix out = y.matrix();

    std::vector<std::vector<Index>> support(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i)
        for (Index t = 0; t < t_len; ++t)
            if (o.is_observed(i, t)) support[static_cast<size_t>(i)].push_back(t);

    for (Index t = 0; t < t_len; ++t) {
        std::map<std::vector<Index>, std::vector<Index>> groups;
        for (Index i = 0; i < n; ++i)
            if (!o.is_observed(i, t)) groups[support[static_cast<size_t>(i)]].push_back(i);
        for (const auto& [cols, rows] : groups) {
            if (cols.empty())
                throw InfeasibleError(
                    "row " + std::to_string(rows.front() + 1) +
                    " has no observed periods to regress on");
            std::vector<Index> train;
            for (Index j = 0; j < n; ++j) {
                if (!o.is_observed(j, t)) continue;
                const auto& sj = support[static_cast<size_t>(j)];
                if (std::includes(sj.begin(), sj.end(), cols.begin(), cols.end()))
                    train.push_back(j);
            }
            if (train.empty())
                throw InfeasibleError(
                    "no training rows observed over the support needed for column " +
                    std::to_string(t + 1));
            Matrix design(static_cast<Index>(train.size()),
                          static_cast<Index>(cols.size()));
            Vector target(static_cast<Index>(train.size()));
            for (size_t r = 0; r < train.size(); ++r) {
                for (size_t c = 0; c < cols.size(); ++c)
                    design(static_cast<Index>(r), static_cast<Index>(c)) =
                        y(train[r], cols[c]);
                target(static_cast<Index>(r)) = y(train[r], t);
            }
            Matrix query(static_cast<Index>(rows.size()),
                         static_cast<Index>(cols.size()));
            for (size_t r = 0; r < rows.size(); ++r)
                for (size_t c = 0; c < cols.size(); ++c)
                    query(static_cast<Index>(r), static_cast<Index>(c)) =
                        y(rows[r], cols[c]);
            const Vector pred = fit_predict(design, target, query);
            for (size_t r = 0; r < rows.size(); ++r)
                out(rows[r], t) = pred(static_cast<Index>(r));
        }
    }
    return out;
}

}  // namespace detail

/// Horizontal (unconfoundedness-style) regression: regress outcomes of a
/// treated period on earlier periods across units, OLS without
/// regularization. Observed cells pass through; missing cells receive the
/// regression prediction.
inline PanelMatrix fit_horizontal(const PanelMatrix& y, const ObservationMask& o) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_horizontal");
    auto ols = [](const Matrix& design, const Vector& target, const Matrix& query) {
        const Weights w = detail::ols_fit(design, target, "fit_horizontal", "hr-en");
        return Vector((query * w.coefficients).array() + w.intercept);
    };
    return PanelMatrix(detail::impute_columnwise(y, o, ols));
}

/// Vertical (synthetic-control-style) regression: the horizontal regression
/// on the transposed panel, entry for entry.
inline PanelMatrix fit_vertical(const PanelMatrix& y, const ObservationMask& o) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_vertical");
    const PanelMatrix yt(Matrix(y.matrix().transpose()));
    auto ols = [](const Matrix& design, const Vector& target, const Matrix& query) {
        const Weights w = detail::ols_fit(design, target, "fit_vertical", "vt-en");
        return Vector((query * w.coefficients).array() + w.intercept);
    };
    Matrix imputed = detail::impute_columnwise(yt, o.transposed(), ols);
    return PanelMatrix(Matrix(imputed.transpose()));
}

/// Horizontal regression with elastic-net regularization.
inline PanelMatrix fit_hr_en(const PanelMatrix& y, const ObservationMask& o,
                             const EnConfig& en) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_hr_en");
    en.validate();
    auto fitter = [&en](const Matrix& design, const Vector& target,
                        const Matrix& query) {
        const double lam =
            en.lambda ? *en.lambda : detail::en_cv_lambda(design, target, en);
        const Weights w = fit_elastic_net(design, target, lam, en.alpha);
        return Vector((query * w.coefficients).array() + w.intercept);
    };
    return PanelMatrix(detail::impute_columnwise(y, o, fitter));
}

/// Vertical regression with elastic-net regularization.
inline PanelMatrix fit_vt_en(const PanelMatrix& y, const ObservationMask& o,
                             const EnConfig& en) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_vt_en");
    en.validate();
    const PanelMatrix yt(Matrix(y.matrix().transpose()));
    auto fitter = [&en](const Matrix& design, const Vector& target,
                        const Matrix& query) {
        const double lam =
            en.lambda ? *en.lambda : detail::en_cv_lambda(design, target, en);
        const Weights w = fit_elastic_net(design, target, lam, en.alpha);
        return Vector((query * w.coefficients).array() + w.intercept);
    };
    Matrix imputed = detail::impute_columnwise(yt, o.transposed(), fitter);
    return PanelMatrix(Matrix(imputed.transpose()));
}

// ---------------------------------------------------------------------------
// Difference in differences
// ---------------------------------------------------------------------------

struct DidFit {
    PanelMatrix imputed;  // Y on observed cells, mu + gamma_i + delta_t on M
    double mu = 0.0;
    Vector gamma;  // unit effects, sum to zero
    Vector delta;  // time effects, sum to zero

    double fitted(Index i, Index t) const { return mu + gamma(i) + delta(t); }
};

/// Two-way fixed effects fit mu + gamma_i + delta_t by least squares on the
/// observed cells; missing cells are imputed from the fitted effects.
/// Requires the bipartite unit/period graph of observed cells to be
/// connected, otherwise the effects are not identified.
inline DidFit fit_did(const PanelMatrix& y, const ObservationMask& o) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_did");
    const Index n = y.n_units();
    const Index t_len = y.n_periods();
    if (o.n_observed() == 0) throw MaskError("fit_did: empty observation set");

    // connectivity of the two-way design via union-find on units + periods
    std::vector<Index> parent(static_cast<size_t>(n + t_len));
    std::iota(parent.begin(), parent.end(), Index{0});
    std::function<Index(Index)> find = [&](Index v) {
        while (parent[static_cast<size_t>(v)] != v) {
            parent[static_cast<size_t>(v)] =
                parent[static_cast<size_t>(parent[static_cast<size_t>(v)])];
            v = parent[static_cast<size_t>(v)];
        }
        return v;
    };
    for (const auto& [i, t] : o.observed_cells())
        parent[static_cast<size_t>(find(i))] = find(n + t);
    const Index root = find(0);
    for (Index v = 0; v < n + t_len; ++v)
        if (find(v) != root)
            throw IllPosedError(
                "fit_did: two-way design is disconnected, effects not identified");

    // reduced parametrization: theta = (mu, gamma_1..gamma_{N-1},
    // delta_1..delta_{T-1}), last effects = -sum of the others
    const Index p = 1 + (n - 1) + (t_len - 1);
    Matrix xtx = Matrix::Zero(p, p);
    Vector xty = Vector::Zero(p);
    std::vector<std::pair<Index, double>> row;
    for (const auto& [i, t] : o.observed_cells()) {
        row.clear();
        row.emplace_back(0, 1.0);
        if (i < n - 1) row.emplace_back(1 + i, 1.0);
        else for (Index j = 0; j < n - 1; ++j) row.emplace_back(1 + j, -1.0);
        if (t < t_len - 1) row.emplace_back(n + t, 1.0);
        else for (Index j = 0; j < t_len - 1; ++j) row.emplace_back(n + j, -1.0);
        for (const auto& [a, va] : row) {
            xty(a) += va * y(i, t);
            for (const auto& [b, vb] : row) xtx(a, b) += va * vb;
        }
    }
    const Vector theta = xtx.ldlt().solve(xty);

    DidFit fit;
    fit.mu = theta(0);
    fit.gamma = Vector(n);
    fit.gamma.head(n - 1) = theta.segment(1, n - 1);
    fit.gamma(n - 1) = -theta.segment(1, n - 1).sum();
    fit.delta = Vector(t_len);
    fit.delta.head(t_len - 1) = theta.segment(n, t_len - 1);
    fit.delta(t_len - 1) = -theta.segment(n, t_len - 1).sum();

    Matrix imputed = y.matrix();
    for (Index i = 0; i < n; ++i)
        for (Index t = 0; t < t_len; ++t)
            if (!o.is_observed(i, t)) imputed(i, t) = fit.fitted(i, t);
    fit.imputed = PanelMatrix(std::move(imputed));
    return fit;
}

// ---------------------------------------------------------------------------
// Synthetic control with the Abadie-Diamond-Hainmueller restrictions
// ---------------------------------------------------------------------------

/// Exact Euclidean projection onto the probability simplex.
inline Vector project_simplex(const Vector& v) {
    const Index n = v.size();
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double css = 0.0, theta = 0.0;
    Index rho = 0;
    for (Index j = 0; j < n; ++j) {
        css += u[static_cast<size_t>(j)];
        const double cand = (css - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<size_t>(j)] - cand > 0.0) {
            rho = j;
            theta = cand;
        }
    }
    (void)rho;
    return (v.array() - theta).max(0.0);
}

struct ScAdhFit {
    PanelMatrix imputed;
    // simplex weights over the donor units, one entry per treated unit
    std::vector<std::pair<Index, Weights>> unit_weights;
    std::vector<Index> donors;
};

/// Synthetic control: per treated unit, nonnegative donor weights summing to
/// one (zero intercept) chosen to match the unit's pre-treatment outcomes,
/// solved by projected gradient with exact simplex projection. Donors are the
/// fully observed units. Missing cells are imputed as the weighted donor
/// average.
inline ScAdhFit fit_sc_adh(const PanelMatrix& y, const ObservationMask& o,
                           int max_iterations = 10000, double tolerance = 1e-10) {
    require_same_shape(y, o.n_units(), o.n_periods(), "fit_sc_adh");
    if (!o.is_row_monotone())
        throw InfeasibleError(
            "fit_sc_adh: requires block or staggered missingness "
            "(rows observed on a leading prefix)");
    const Index n = y.n_units();
    const Index t_len = y.n_periods();
    const auto prefix = o.observed_prefix_lengths();

    ScAdhFit fit;
    for (Index j = 0; j < n; ++j)
        if (prefix[static_cast<size_t>(j)] == t_len) fit.donors.push_back(j);
    const Index nd = static_cast<Index>(fit.donors.size());

    Matrix imputed = y.matrix();
    for (Index i = 0; i < n; ++i) {
        const Index a = prefix[static_cast<size_t>(i)];
        if (a == t_len) continue;  // control unit, nothing to impute
        if (a == 0)
            throw InfeasibleError("fit_sc_adh: unit " + std::to_string(i + 1) +
                                  " has no pre-treatment periods");
        if (nd == 0)
            throw InfeasibleError("fit_sc_adh: no fully observed control units");

        Matrix donor_pre(nd, a);
        for (Index d = 0; d < nd; ++d)
            donor_pre.row(d) = y.matrix().row(fit.donors[static_cast<size_t>(d)]).head(a);
        const Vector target = y.matrix().row(i).head(a).transpose();

        Vector g = Vector::Constant(nd, 1.0 / static_cast<double>(nd));
        if (nd == 1) {
            g(0) = 1.0;
        } else {
            const double s1 = singular_values(donor_pre)(0);
            const double base_step = s1 > 0.0 ? 1.0 / (s1 * s1) : 1.0;
            double f = (target - donor_pre.transpose() * g).squaredNorm();
            for (int it = 0; it < max_iterations; ++it) {
                const Vector grad =
                    -2.0 * donor_pre * (target - donor_pre.transpose() * g);
                double step = base_step;
                Vector g_next = project_simplex(g - step * grad);
                double f_next = (target - donor_pre.transpose() * g_next).squaredNorm();
                // halve the step if it ever fails to descend
                while (f_next > f && step > 1e-18) {
                    step *= 0.5;
                    g_next = project_simplex(g - step * grad);
                    f_next = (target - donor_pre.transpose() * g_next).squaredNorm();
                }
                const bool done =
                    std::abs(f - f_next) <= tolerance * std::max(1.0, std::abs(f));
                g = std::move(g_next);
                f = f_next;
                if (done) break;
            }
        }

        for (Index t = a; t < t_len; ++t) {
            double v = 0.0;
            for (Index d = 0; d < nd; ++d)
                v += g(d) * y(fit.donors[static_cast<size_t>(d)], t);
            imputed(i, t) = v;
        }
        Weights w;
        w.coefficients = g;
        w.intercept = 0.0;
        fit.unit_weights.emplace_back(i, std::move(w));
    }
    fit.imputed = PanelMatrix(std::move(imputed));
    return fit;
}

}  // namespace panelmc
