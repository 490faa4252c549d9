#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/panel.hpp"

namespace panelmc {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using CellIndex = std::pair<Index, Index>;  // (unit, period), 0-based internally

enum class MaskStructure { general, block, staggered };

/// The observation set O and its complement M. Stored both as a boolean
/// N x T array (O(1) membership, drives projections) and as a sorted list of
/// observed (unit, period) pairs (drives cross-validation sampling).
/// Immutable after construction. External formats use 1-based indices;
/// everything here is 0-based.
class ObservationMask {
  public:
    ObservationMask(Index n_units, Index n_periods, BoolArray observed,
                    MaskStructure structure = MaskStructure::general)
        : observed_(std::move(observed)), structure_(structure) {
        if (n_units < 1 || n_periods < 1)
            throw DimensionError("ObservationMask: dimensions must be positive");
        if (observed_.rows() != n_units || observed_.cols() != n_periods)
            throw DimensionError("ObservationMask: array shape disagrees with N x T");
        for (Index i = 0; i < n_units; ++i)
            for (Index t = 0; t < n_periods; ++t)
                if (observed_(i, t)) cells_.emplace_back(i, t);
    }

    static ObservationMask full(Index n_units, Index n_periods) {
        return ObservationMask(n_units, n_periods,
                               BoolArray::Constant(n_units, n_periods, true));
    }

    static ObservationMask from_cells(Index n_units, Index n_periods,
                                      const std::vector<CellIndex>& observed_cells) {
        BoolArray arr = BoolArray::Constant(n_units, n_periods, false);
        for (const auto& [i, t] : observed_cells) {
            if (i < 0 || i >= n_units || t < 0 || t >= n_periods)
                throw DimensionError("ObservationMask: cell (" + std::to_string(i) +
                                     "," + std::to_string(t) + ") outside [N]x[T]");
            arr(i, t) = true;
        }
        return ObservationMask(n_units, n_periods, std::move(arr));
    }

    Index n_units() const { return observed_.rows(); }
    Index n_periods() const { return observed_.cols(); }
    MaskStructure structure() const { return structure_; }

    bool is_observed(Index i, Index t) const { return observed_(i, t); }
    const BoolArray& array() const { return observed_; }

    /// Sorted (row-major) list of observed cells, |O| entries.
    const std::vector<CellIndex>& observed_cells() const { return cells_; }

    Index n_observed() const { return static_cast<Index>(cells_.size()); }
    Index n_missing() const { return n_units() * n_periods() - n_observed(); }

    std::vector<CellIndex> missing_cells() const {
        std::vector<CellIndex> out;
        out.reserve(static_cast<size_t>(n_missing()));
        for (Index i = 0; i < n_units(); ++i)
            for (Index t = 0; t < n_periods(); ++t)
                if (!observed_(i, t)) out.emplace_back(i, t);
        return out;
    }

    /// 0/1 indicator matrix of O, handy for masked arithmetic.
    Matrix indicator() const {
        return observed_.cast<double>().matrix();
    }

    /// Number of fully observed rows (the control count N_c).
    Index n_control() const {
        Index n = 0;
        for (Index i = 0; i < n_units(); ++i)
            if (observed_.row(i).all()) ++n;
        return n;
    }

    /// Count of leading observed periods per unit. Equals the adoption times
    /// t_i for staggered masks (t_i = T means fully observed, a never adopter).
    std::vector<Index> observed_prefix_lengths() const {
        std::vector<Index> a(static_cast<size_t>(n_units()));
        for (Index i = 0; i < n_units(); ++i) {
            Index t = 0;
            while (t < n_periods() && observed_(i, t)) ++t;
            a[static_cast<size_t>(i)] = t;
        }
        return a;
    }

    /// True when every row's observed set is a leading prefix of the periods,
    /// i.e. (i,t) in O implies (i,t') in O for all t' < t.
    bool is_row_monotone() const {
        const auto a = observed_prefix_lengths();
        for (Index i = 0; i < n_units(); ++i)
            if (observed_.row(i).cast<int>().sum() != a[static_cast<size_t>(i)])
                return false;
        return true;
    }

    ObservationMask transposed() const {
        BoolArray t = observed_.transpose();
        return ObservationMask(n_periods(), n_units(), std::move(t));
    }

  private:
    BoolArray observed_;
    MaskStructure structure_;
    std::vector<CellIndex> cells_;
};

/// Block missingness: cells (i, t) with i treated and t >= t0 are missing.
/// t0 is 1-based to match the external convention.
inline ObservationMask mask_block(Index n_units, Index n_periods, Index t0,
                                  const std::vector<Index>& treated_units) {
    if (t0 < 1 || t0 > n_periods)
        throw InvalidSpecError("mask_block: T0 must lie in [1, T], got " +
                               std::to_string(t0));
    BoolArray arr = BoolArray::Constant(n_units, n_periods, true);
    for (Index i : treated_units) {
        if (i < 0 || i >= n_units)
            throw InvalidSpecError("mask_block: treated unit " + std::to_string(i) +
                                   " outside [0, N)");
        for (Index t = t0 - 1; t < n_periods; ++t) arr(i, t) = false;
    }
    return ObservationMask(n_units, n_periods, std::move(arr), MaskStructure::block);
}

/// Staggered adoption: unit i is observed for periods 1..t_i (1-based t_i).
/// t_i = T encodes a never adopter with a fully observed row.
inline ObservationMask mask_staggered(Index n_periods,
                                      const std::vector<Index>& adoption_times) {
    const Index n_units = static_cast<Index>(adoption_times.size());
    if (n_units < 1) throw InvalidSpecError("mask_staggered: empty adoption vector");
    BoolArray arr = BoolArray::Constant(n_units, n_periods, false);
    for (Index i = 0; i < n_units; ++i) {
        const Index ti = adoption_times[static_cast<size_t>(i)];
        if (ti < 1 || ti > n_periods)
            throw InvalidSpecError("mask_staggered: adoption time " +
                                   std::to_string(ti) + " for unit " +
                                   std::to_string(i) + " outside [1, T]");
        for (Index t = 0; t < ti; ++t) arr(i, t) = true;
    }
    return ObservationMask(n_units, n_periods, std::move(arr),
                           MaskStructure::staggered);
}

/// P_O(A): keep observed entries, zero the rest.
inline PanelMatrix project_observed(const PanelMatrix& a, const ObservationMask& o) {
    require_same_shape(a, o.n_units(), o.n_periods(), "project_observed");
    Matrix r = a.matrix().cwiseProduct(o.indicator());
    return PanelMatrix(std::move(r));
}

/// P_O^perp(A) = A - P_O(A): keep missing entries, zero the observed ones.
inline PanelMatrix project_missing(const PanelMatrix& a, const ObservationMask& o) {
    require_same_shape(a, o.n_units(), o.n_periods(), "project_missing");
    Matrix r = a.matrix() - a.matrix().cwiseProduct(o.indicator());
    return PanelMatrix(std::move(r));
}

}  // namespace panelmc
