#pragma once

// Proximal operators of the l1 and nuclear norms.

#include <nettomo/core.hpp>

#include <Eigen/SVD>

namespace nettomo {

/// Entrywise sgn(m) * max(|m| - tau, 0).
inline Matrix soft_threshold(const Matrix &m, double tau) {
    if (!(tau >= 0.0)) throw InvalidArgument("soft_threshold: tau must be >= 0");
    return m.unaryExpr([tau](double v) {
        if (v > tau) return v - tau;
        if (v < -tau) return v + tau;
        return 0.0;
    });
}

inline double soft_threshold(double v, double tau) {
    if (!(tau >= 0.0)) throw InvalidArgument("soft_threshold: tau must be >= 0");
    if (v > tau) return v - tau;
    if (v < -tau) return v + tau;
    return 0.0;
}

/// Singular value thresholding U S_tau(Sigma) V'. `rank_out` receives the
/// number of singular values that survive.
inline Matrix svt(const Matrix &m, double tau, Index *rank_out = nullptr) {
    if (!(tau >= 0.0)) throw InvalidArgument("svt: tau must be >= 0");
    if (!m.allFinite()) throw DivergenceError("svt: non-finite input", -1);
    if (m.size() == 0) return m;
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector &s = svd.singularValues();
    Index keep = 0;
    while (keep < s.size() && s(keep) > tau) ++keep;
    if (rank_out) *rank_out = keep;
    if (keep == 0) return Matrix::Zero(m.rows(), m.cols());
    const Vector shrunk = s.head(keep).array() - tau;
    return svd.matrixU().leftCols(keep) * shrunk.asDiagonal() *
           svd.matrixV().leftCols(keep).transpose();
}

inline double nuclear_norm(const Matrix &m) {
    if (m.size() == 0) return 0.0;
    Eigen::BDCSVD<Matrix> svd(m);
    return svd.singularValues().sum();
}

inline double l1_norm(const Matrix &m) { return m.cwiseAbs().sum(); }

} // namespace nettomo
