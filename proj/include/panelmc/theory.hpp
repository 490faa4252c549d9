#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/norms.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/rng.hpp"
#include "panelmc/soft_impute.hpp"

namespace panelmc {

/// sigma_1(P_O(E)): operator norm of the observed noise matrix.
inline double noise_operator_norm(const PanelMatrix& e, const ObservationMask& o) {
    require_same_shape(e, o.n_units(), o.n_periods(), "noise_operator_norm");
    const Matrix masked = e.matrix().cwiseProduct(o.indicator());
    const Vector s = singular_values(masked);
    return s.size() > 0 ? s(0) : 0.0;
}

enum class LemmaVerdict { holds, fails, not_applicable };

/// Oracle inequality check: with E = P_O(Y - L*) the inequality
///   sum_O (L* - L_hat)_it^2 / |O|  <=  10 * lambda * sqrt(R) * ||L* - L_hat||_F
/// is asserted for lambda >= 3*||E||_op / |O|; smaller lambdas are outside the
/// inequality's regime and return not_applicable.
inline LemmaVerdict check_lemma_error_bound(const PanelMatrix& l_star,
                                            const PanelMatrix& l_hat,
                                            const PanelMatrix& y,
                                            const ObservationMask& o,
                                            double lambda, Index rank_r) {
    require_same_shape(l_star, o.n_units(), o.n_periods(), "check_lemma_error_bound");
    require_same_shape(l_hat, o.n_units(), o.n_periods(), "check_lemma_error_bound");
    require_same_shape(y, o.n_units(), o.n_periods(), "check_lemma_error_bound");
    const Index n_obs = o.n_observed();
    if (n_obs == 0) throw MaskError("check_lemma_error_bound: empty observation set");

    const PanelMatrix noise(Matrix(y.matrix() - l_star.matrix()));
    const double e_op = noise_operator_norm(noise, o);
    if (lambda < 3.0 * e_op / static_cast<double>(n_obs))
        return LemmaVerdict::not_applicable;

    const Matrix diff = l_star.matrix() - l_hat.matrix();
    const double lhs =
        diff.cwiseProduct(o.indicator()).squaredNorm() / static_cast<double>(n_obs);
    const double rhs =
        10.0 * lambda * std::sqrt(static_cast<double>(rank_r)) * diff.norm();
    return lhs <= rhs + 1e-10 ? LemmaVerdict::holds : LemmaVerdict::fails;
}

/// Constants entering the finite-sample error bound.
struct TheoremBoundConfig {
    double c_constant = 1.0;
    double sigma = 1.0;
    double l_max = 1.0;
    Index rank = 1;
    double p_c = 1.0;

    void validate() const {
        if (c_constant <= 0.0 || sigma < 0.0 || l_max <= 0.0 || rank < 1)
            throw InvalidSpecError("TheoremBoundConfig: constants must be positive");
        if (p_c <= 0.0 || p_c > 1.0)
            throw InvalidSpecError(
                "TheoremBoundConfig: p_c must lie in (0, 1]; p_c = 0 diverges");
    }
};

/// High-probability RMSE bound: C times the largest of the three error terms
///   L_max * sqrt(log(N+T)/(N p_c^2)),
///   sigma * sqrt(R log(N+T)/(T p_c^2)),
///   sigma * sqrt(R log^3(N+T)/(N p_c^2)).
inline double theorem_bound(const TheoremBoundConfig& cfg, Index n, Index t) {
    cfg.validate();
    if (n < 1 || t < 1)
        throw InvalidSpecError("theorem_bound: N and T must be >= 1");
    const double lg = std::log(static_cast<double>(n + t));
    const double pc2 = cfg.p_c * cfg.p_c;
    const double r = static_cast<double>(cfg.rank);
    const double term1 = cfg.l_max * std::sqrt(lg / (static_cast<double>(n) * pc2));
    const double term2 =
        cfg.sigma * std::sqrt(r * lg / (static_cast<double>(t) * pc2));
    const double term3 =
        cfg.sigma * std::sqrt(r * lg * lg * lg / (static_cast<double>(n) * pc2));
    return cfg.c_constant * std::max({term1, term2, term3});
}

/// Plug-in estimate of the control probability: the fraction N_c / N of fully
/// observed rows. A diagnostic proxy for the min-based population quantity,
/// which depends on the unobservable adoption distributions.
inline double empirical_pc(const ObservationMask& o) {
    return static_cast<double>(o.n_control()) / static_cast<double>(o.n_units());
}

// ---------------------------------------------------------------------------
// Batch experiments used by the check-theory command and the acceptance suite
// ---------------------------------------------------------------------------

struct Lemma1Instance {
    LemmaVerdict verdict = LemmaVerdict::not_applicable;
    double lhs = 0.0;
    double rhs = 0.0;
    double lambda = 0.0;
};

struct Lemma1BatchConfig {
    int count = 50;
    Index n = 30, t = 30;
    Index rank = 2;
    double sigma = 0.2;
    std::uint64_t seed = 20260810;
};

/// Seeded low-rank + noise instances under staggered masks, each fitted at
/// lambda = 3*||E||_op/|O| (the smallest lambda the inequality covers) and
/// checked against the oracle inequality.
inline std::vector<Lemma1Instance> lemma1_batch(const Lemma1BatchConfig& cfg) {
    std::vector<Lemma1Instance> out;
    out.reserve(static_cast<size_t>(cfg.count));
    for (int s = 0; s < cfg.count; ++s) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(s));
        const Matrix u = rng.normal_matrix(cfg.n, cfg.rank);
        const Matrix v = rng.normal_matrix(cfg.t, cfg.rank);
        const Matrix l_star =
            (u * v.transpose()) / std::sqrt(static_cast<double>(cfg.rank));
        const Matrix noise = cfg.sigma * rng.normal_matrix(cfg.n, cfg.t);
        const PanelMatrix y(l_star + noise);

        // staggered: half the units adopt somewhere in the second half
        std::vector<Index> adoption(static_cast<size_t>(cfg.n), cfg.t);
        const auto treated = rng.sample_without_replacement(cfg.n, cfg.n / 2);
        for (Index i : treated)
            adoption[static_cast<size_t>(i)] =
                static_cast<Index>(rng.uniform_int(cfg.t / 2, cfg.t - 1));
        const ObservationMask mask = mask_staggered(cfg.t, adoption);

        const PanelMatrix ls(l_star);
        const double e_op =
            noise_operator_norm(PanelMatrix(Matrix(y.matrix() - l_star)), mask);
        Lemma1Instance inst;
        inst.lambda = 3.0 * e_op / static_cast<double>(mask.n_observed());

        McnnmConfig fit_cfg;
        fit_cfg.lambda = inst.lambda;
        const FitResult fit = fit_mcnnm(y, mask, fit_cfg);

        const Matrix diff = l_star - fit.estimate.matrix();
        inst.lhs = diff.cwiseProduct(mask.indicator()).squaredNorm() /
                   static_cast<double>(mask.n_observed());
        inst.rhs = 10.0 * inst.lambda * std::sqrt(static_cast<double>(cfg.rank)) *
                   diff.norm();
        inst.verdict = check_lemma_error_bound(ls, fit.estimate, y, mask,
                                               inst.lambda, cfg.rank);
        out.push_back(inst);
    }
    return out;
}

/// Checks that the bound moves the right way along each parameter axis:
/// nonincreasing under joint panel growth (N and T doubled together, the
/// consistency direction) and in p_c, nondecreasing in sigma, R, L_max.
/// Growing only one of N, T can raise the bound through the log(N+T)
/// factors, so the panel axes are checked jointly.
inline bool theorem_bound_monotone_lattice(std::string* failure = nullptr) {
    const std::vector<Index> ns{30, 60, 120};
    const std::vector<Index> ts{30, 60, 120};
    const std::vector<double> sigmas{0.5, 1.0, 2.0};
    const std::vector<Index> ranks{1, 2, 4};
    const std::vector<double> pcs{0.25, 0.5, 1.0};
    const std::vector<double> lmaxes{0.5, 1.0, 2.0};

    auto value = [](Index n, Index t, double sg, Index r, double pc, double lm) {
        TheoremBoundConfig cfg;
        cfg.sigma = sg;
        cfg.rank = r;
        cfg.p_c = pc;
        cfg.l_max = lm;
        return theorem_bound(cfg, n, t);
    };

    for (Index n : ns)
        for (Index t : ts)
            for (double sg : sigmas)
                for (Index r : ranks)
                    for (double pc : pcs)
                        for (double lm : lmaxes) {
                            const double base = value(n, t, sg, r, pc, lm);
                            const bool ok =
                                value(2 * n, 2 * t, sg, r, pc, lm) <= base + 1e-12 &&
                                value(4 * n, 4 * t, sg, r, pc, lm) <= base + 1e-12 &&
                                value(n, t, sg, r, std::min(1.0, 2.0 * pc), lm) <=
                                    base + 1e-12 &&
                                value(n, t, 2.0 * sg, r, pc, lm) >= base - 1e-12 &&
                                value(n, t, sg, 2 * r, pc, lm) >= base - 1e-12 &&
                                value(n, t, sg, r, pc, 2.0 * lm) >= base - 1e-12;
                            if (!ok) {
                                if (failure)
                                    *failure = "monotonicity violated at N=" +
                                               std::to_string(n) + " T=" +
                                               std::to_string(t);
                                return false;
                            }
                        }
    return true;
}

/// Max observed ratio ||E||_op / (sigma * max(sqrt(N log(N+T)),
/// sqrt(T) log^{3/2}(N+T))) over a seeded batch of staggered instances.
/// Used to calibrate and then guard the operator-norm regression constant.
inline double noise_bound_max_ratio(int count, Index n, Index t, double sigma,
                                    std::uint64_t seed) {
    double max_ratio = 0.0;
    for (int s = 0; s < count; ++s) {
        Rng rng(seed, static_cast<std::uint64_t>(s));
        const Matrix noise = sigma * rng.normal_matrix(n, t);
        std::vector<Index> adoption(static_cast<size_t>(n), t);
        const auto treated = rng.sample_without_replacement(n, n / 2);
        for (Index i : treated)
            adoption[static_cast<size_t>(i)] =
                static_cast<Index>(rng.uniform_int(t / 2, t - 1));
        const ObservationMask mask = mask_staggered(t, adoption);
        const double e_op = noise_operator_norm(PanelMatrix(noise), mask);
        const double lg = std::log(static_cast<double>(n + t));
        const double bound =
            sigma * std::max(std::sqrt(static_cast<double>(n) * lg),
                             std::sqrt(static_cast<double>(t)) * std::pow(lg, 1.5));
        max_ratio = std::max(max_ratio, e_op / bound);
    }
    return max_ratio;
}

}  // namespace panelmc
