#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "panelmc/errors.hpp"
#include "panelmc/panel.hpp"

namespace panelmc {

// Singular values below rank_tolerance * sigma_1 count as zero when ranks are
// computed; floating-point SVD never returns exact zeros.
inline constexpr double kRankTolerance = 1e-10;

/// Thin SVD A = left * diag(singular_values) * right^T with orthonormal
/// factor columns and singular values sorted descending.
struct SvdTriple {
    Matrix left;             // N x k
    Vector singular_values;  // k, descending, nonnegative
    Matrix right;            // T x k

    Matrix reconstruct() const {
        return left * singular_values.asDiagonal() * right.transpose();
    }

    Index effective_rank(double tol = kRankTolerance) const {
        if (singular_values.size() == 0) return 0;
        const double cutoff = tol * singular_values(0);
        Index r = 0;
        while (r < singular_values.size() && singular_values(r) > cutoff) ++r;
        return r;
    }
};

inline SvdTriple svd_thin(const Matrix& a) {
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return SvdTriple{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

inline Vector singular_values(const Matrix& a) {
    Eigen::BDCSVD<Matrix> svd(a);
    return svd.singularValues();
}

/// The matrix-norm family used throughout: Schatten-p, Frobenius, rank,
/// nuclear, operator, max, and element-wise l1.
struct NormKind {
    enum class Tag { schatten, frobenius, rank, nuclear, op, max, elementwise_l1 };

    Tag tag;
    double p = 2.0;  // only meaningful for schatten

    static NormKind schatten(double p) {
        if (p < 1.0) throw InvalidSpecError("NormKind: Schatten norm requires p >= 1");
        return NormKind{Tag::schatten, p};
    }
    static NormKind frobenius() { return NormKind{Tag::frobenius}; }
    static NormKind rank() { return NormKind{Tag::rank}; }
    static NormKind nuclear() { return NormKind{Tag::nuclear}; }
    static NormKind op() { return NormKind{Tag::op}; }
    static NormKind max() { return NormKind{Tag::max}; }
    static NormKind elementwise_l1() { return NormKind{Tag::elementwise_l1}; }
};

inline double norm(const Matrix& a, const NormKind& kind) {
    using Tag = NormKind::Tag;
    switch (kind.tag) {
        case Tag::frobenius:
            return a.norm();
        case Tag::max:
            return a.cwiseAbs().maxCoeff();
        case Tag::elementwise_l1:
            return a.cwiseAbs().sum();
        case Tag::schatten: {
            const Vector s = singular_values(a);
            return std::pow(s.array().pow(kind.p).sum(), 1.0 / kind.p);
        }
        case Tag::rank: {
            const Vector s = singular_values(a);
            if (s.size() == 0 || s(0) == 0.0) return 0.0;
            return static_cast<double>((s.array() > kRankTolerance * s(0)).count());
        }
        case Tag::nuclear:
            return singular_values(a).sum();
        case Tag::op: {
            const Vector s = singular_values(a);
            return s.size() > 0 ? s(0) : 0.0;
        }
    }
    throw InvalidSpecError("norm: unknown kind");
}

inline double norm(const PanelMatrix& a, const NormKind& kind) {
    return norm(a.matrix(), kind);
}

}  // namespace panelmc
