#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "panelmc/errors.hpp"

namespace panelmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dense N x T panel of outcomes. Rows are units, columns are time periods.
/// Entries must be finite; a missing outcome is represented by the mask,
/// never by NaN in the matrix itself.
class PanelMatrix {
  public:
    PanelMatrix() = default;

    explicit PanelMatrix(Matrix values) : values_(std::move(values)) {
        if (values_.rows() < 1 || values_.cols() < 1)
            throw DimensionError("PanelMatrix: dimensions must be positive, got " +
                                 std::to_string(values_.rows()) + "x" +
                                 std::to_string(values_.cols()));
        if (!values_.allFinite())
            throw InvalidSpecError("PanelMatrix: entries must be finite (no NaN/Inf)");
    }

    static PanelMatrix zero(Index n_units, Index n_periods) {
        return PanelMatrix(Matrix::Zero(n_units, n_periods));
    }

    Index n_units() const { return values_.rows(); }
    Index n_periods() const { return values_.cols(); }

    const Matrix& matrix() const { return values_; }
    double operator()(Index i, Index t) const { return values_(i, t); }

  private:
    Matrix values_;
};

inline void require_same_shape(const PanelMatrix& a, Index rows, Index cols,
                               const char* what) {
    if (a.n_units() != rows || a.n_periods() != cols)
        throw DimensionError(std::string(what) + ": dimension mismatch, " +
                             std::to_string(a.n_units()) + "x" +
                             std::to_string(a.n_periods()) + " vs " +
                             std::to_string(rows) + "x" + std::to_string(cols));
}

}  // namespace panelmc
