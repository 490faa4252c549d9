#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/rng.hpp"

namespace panelmc {

/// Synthetic panel specification: Y = L* + noise with L* a seeded rank-R
/// factor product.
struct SyntheticSpec {
    Index n = 0, t = 0;
    Index rank = 1;
    double noise_sigma = 0.0;
    enum class NoiseModel { iid_gaussian, ar1 } noise_model = NoiseModel::iid_gaussian;
    double ar_rho = 0.0;  // only read for the ar1 noise model
    double factor_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1 || t < 1) throw InvalidSpecError("SyntheticSpec: N, T must be >= 1");
        if (rank < 1 || rank > std::min(n, t))
            throw InvalidSpecError("SyntheticSpec: rank must lie in [1, min(N,T)]");
        if (noise_sigma < 0.0)
            throw InvalidSpecError("SyntheticSpec: noise_sigma must be >= 0");
        if (noise_model == NoiseModel::ar1 && std::abs(ar_rho) >= 1.0)
            throw InvalidSpecError("SyntheticSpec: AR(1) rho must lie in (-1, 1)");
    }
};

struct SyntheticPanel {
    PanelMatrix l_star;
    PanelMatrix y;
};

/// L* = U V^T with standard-normal factors, scaled by factor_scale/sqrt(rank)
/// so entries of L* have unit variance at factor_scale = 1. Noise is either
/// iid Gaussian or a stationary per-unit AR(1) with marginal deviation
/// noise_sigma. Deterministic in the seed.
inline SyntheticPanel generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Matrix u = rng.normal_matrix(spec.n, spec.rank);
    const Matrix v = rng.normal_matrix(spec.t, spec.rank);
    Matrix l = (spec.factor_scale / std::sqrt(static_cast<double>(spec.rank))) *
               (u * v.transpose());

    Matrix noise = Matrix::Zero(spec.n, spec.t);
    if (spec.noise_sigma > 0.0) {
        if (spec.noise_model == SyntheticSpec::NoiseModel::iid_gaussian) {
            noise = spec.noise_sigma * rng.normal_matrix(spec.n, spec.t);
        } else {
            const double rho = spec.ar_rho;
            const double innovation = std::sqrt(1.0 - rho * rho);
            for (Index i = 0; i < spec.n; ++i) {
                double prev = rng.normal();
                noise(i, 0) = spec.noise_sigma * prev;
                for (Index t = 1; t < spec.t; ++t) {
                    prev = rho * prev + innovation * rng.normal();
                    noise(i, t) = spec.noise_sigma * prev;
                }
            }
        }
    }

    SyntheticPanel out;
    out.y = PanelMatrix(l + noise);
    out.l_star = PanelMatrix(std::move(l));
    return out;
}

/// Pseudo-treatment design: which cells of a fully observed panel to hide.
/// Simultaneous adoption hides a random block; staggered adoption draws a
/// uniform adoption time per treated unit.
struct PseudoTreatmentPlan {
    enum class Mode { simultaneous, staggered } mode = Mode::simultaneous;
    Index n_treated = 1;
    double t0_ratio = 0.5;  // simultaneous: T0 = ceil(t0_ratio * T)
    // staggered: adoption times drawn uniformly from [lo, hi] (1-based);
    // defaults to the last half of the periods, hi = T meaning never adopts
    std::optional<Index> adoption_lo;
    std::optional<Index> adoption_hi;
    int replications = 1;
    std::uint64_t seed = 0;

    void validate(Index n, Index t) const {
        if (n_treated < 1 || n_treated >= n)
            throw InfeasibleError("PseudoTreatmentPlan: need 1 <= n_treated < N");
        if (replications < 1)
            throw InvalidSpecError("PseudoTreatmentPlan: replications must be >= 1");
        if (mode == Mode::simultaneous && (t0_ratio <= 0.0 || t0_ratio >= 1.0))
            throw InvalidSpecError("PseudoTreatmentPlan: t0_ratio must lie in (0, 1)");
        const Index lo = adoption_lo.value_or((t + 1) / 2);
        const Index hi = adoption_hi.value_or(t);
        if (mode == Mode::staggered && (lo < 1 || hi > t || lo > hi))
            throw InvalidSpecError(
                "PseudoTreatmentPlan: adoption range must satisfy 1 <= lo <= hi <= T");
    }
};

/// One mask per replication, derived from independent (seed, replication)
/// streams so any subset of replications can be regenerated in isolation.
inline std::vector<ObservationMask> make_pseudo_masks(const PseudoTreatmentPlan& plan,
                                                      Index n, Index t) {
    plan.validate(n, t);
    std::vector<ObservationMask> masks;
    masks.reserve(static_cast<size_t>(plan.replications));
    for (int rep = 0; rep < plan.replications; ++rep) {
        Rng rng(plan.seed, static_cast<std::uint64_t>(rep));
        const auto treated = rng.sample_without_replacement(n, plan.n_treated);
        if (plan.mode == PseudoTreatmentPlan::Mode::simultaneous) {
            const Index t0 = static_cast<Index>(
                std::ceil(plan.t0_ratio * static_cast<double>(t)));
            masks.push_back(
                mask_block(n, t, std::max<Index>(t0, 1), treated));
        } else {
            const Index lo = plan.adoption_lo.value_or((t + 1) / 2);
            const Index hi = plan.adoption_hi.value_or(t);
            std::vector<Index> adoption(static_cast<size_t>(n), t);
            for (Index i : treated)
                adoption[static_cast<size_t>(i)] =
                    static_cast<Index>(rng.uniform_int(lo, hi));
            masks.push_back(mask_staggered(t, adoption));
        }
    }
    return masks;
}

}  // namespace panelmc
