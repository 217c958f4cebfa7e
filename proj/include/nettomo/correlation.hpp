#pragma once

// Correlation matrices for the Bayesian estimator: moment-based and
// data-driven construction of R_L, R_Q, and Toeplitz blocks for the
// anomaly factors.

#include <nettomo/core.hpp>
#include <nettomo/synthgen.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <utility>
#include <vector>

namespace nettomo {

inline constexpr double kDefaultPdFloor = 1e-6;

namespace detail {

inline void require_symmetric(const Matrix &m, const char *who) {
    if (m.rows() != m.cols())
        throw DimensionError(std::string(who) + ": matrix is not square");
    const double scale = 1.0 + max_abs(m);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw InvalidArgument(std::string(who) + ": matrix is not symmetric");
}

} // namespace detail

/// Clips eigenvalues below eps * lambda_max. Input that already satisfies
/// the floor is returned unchanged.
inline Matrix condition_pd(const Matrix &m, double eps = kDefaultPdFloor) {
    detail::require_symmetric(m, "condition_pd");
    if (!(eps > 0.0)) throw InvalidArgument("condition_pd: floor must be > 0");
    if (m.size() == 0) return m;
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    const Vector &ev = es.eigenvalues();
    const double top = ev(ev.size() - 1);
    if (!(top > 0.0)) return Matrix::Identity(m.rows(), m.cols());
    const double floor = eps * top;
    if (ev(0) >= floor) return sym;
    const Vector clipped = ev.cwiseMax(floor);
    Matrix out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

/// Symmetric Toeplitz matrix from its first row.
inline Matrix toeplitz(const Vector &first_row) {
    const Index n = first_row.size();
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) m(i, j) = first_row(std::abs(i - j));
    return m;
}

/// Per-flow first rows of the Toeplitz blocks of R_B and R_C.
struct AnomalyBlocks {
    std::vector<Vector> rb_rows;
    std::vector<Vector> rc_rows;
};

struct CorrelationSet {
    Matrix r_l;
    Matrix r_q;
    AnomalyBlocks anomaly_blocks;

    Index flows() const noexcept { return r_l.rows(); }
    Index times() const noexcept { return r_q.rows(); }

    void validate() const {
        detail::require_symmetric(r_l, "CorrelationSet R_L");
        detail::require_symmetric(r_q, "CorrelationSet R_Q");
        if (anomaly_blocks.rb_rows.size() != static_cast<std::size_t>(flows()) ||
            anomaly_blocks.rc_rows.size() != static_cast<std::size_t>(flows()))
            throw DimensionError("CorrelationSet: need one anomaly block per flow");
        for (std::size_t f = 0; f < anomaly_blocks.rb_rows.size(); ++f)
            if (anomaly_blocks.rb_rows[f].size() != times() ||
                anomaly_blocks.rc_rows[f].size() != times())
                throw DimensionError("CorrelationSet: block row length != T");
    }
};

/// Unit correlations everywhere; the Bayesian objective then reduces to
/// the plain Frobenius-regularized one.
inline CorrelationSet identity_correlations(Index flows, Index times) {
    CorrelationSet cs;
    cs.r_l = Matrix::Identity(flows, flows);
    cs.r_q = Matrix::Identity(times, times);
    Vector e = Vector::Zero(times);
    if (times > 0) e(0) = 1.0;
    cs.anomaly_blocks.rb_rows.assign(flows, e);
    cs.anomaly_blocks.rc_rows.assign(flows, e);
    return cs;
}

/// Rescales R_L by s and R_Q by 1/s with s = sqrt(tr R_Q / tr R_L).
inline void equalize_traces(Matrix &r_l, Matrix &r_q) {
    const double tl = r_l.trace();
    const double tq = r_q.trace();
    if (!(tl > 0.0) || !(tq > 0.0))
        throw InvalidArgument("equalize_traces: traces must be positive");
    const double s = std::sqrt(tq / tl);
    r_l *= s;
    r_q /= s;
}

/// R_L = rho E[XX'] / sqrt(E||X||^2), R_Q = rho E[X'X] / sqrt(E||X||^2).
inline std::pair<Matrix, Matrix> corr_from_moments(const Matrix &exxt, const Matrix &extx,
                                                   double enorm_x2, Index rho,
                                                   double eps = kDefaultPdFloor) {
    detail::require_symmetric(exxt, "corr_from_moments E[XX']");
    detail::require_symmetric(extx, "corr_from_moments E[X'X]");
    if (!(enorm_x2 > 0.0)) throw InvalidArgument("corr_from_moments: E||X||^2 must be > 0");
    if (rho < 1) throw InvalidArgument("corr_from_moments: rho must be >= 1");
    const double k = static_cast<double>(rho) / std::sqrt(enorm_x2);
    return {condition_pd(k * exxt, eps), condition_pd(k * extx, eps)};
}

struct TrainingData {
    Matrix traffic_history;
    Matrix anomaly_history;
    Index period = 0;
    Index days = 0;

    void validate() const {
        if (period < 1 || days < 1)
            throw InvalidArgument("TrainingData: period and days must be positive");
        if (traffic_history.cols() != period * days)
            throw DimensionError("TrainingData: traffic history has " +
                                 std::to_string(traffic_history.cols()) +
                                 " columns, expected days*period");
        if (anomaly_history.size() != 0 &&
            (anomaly_history.cols() != period * days ||
             anomaly_history.rows() != traffic_history.rows()))
            throw DimensionError("TrainingData: anomaly history shape mismatch");
    }
};

/// Learns (R_L, R_Q) from day-long blocks of nominal traffic, assuming a
/// daily cyclostationary profile and mutually uncorrelated flows.
inline std::pair<Matrix, Matrix> learn_RQ_RL(const TrainingData &data, Index rho,
                                             double eps = kDefaultPdFloor) {
    data.validate();
    if (data.days < 2) throw InvalidArgument("learn_RQ_RL: need at least two days (K >= 2)");
    if (rho < 1) throw InvalidArgument("learn_RQ_RL: rho must be >= 1");
    const Index flows = data.traffic_history.rows();
    const Index t = data.period;
    const double k = static_cast<double>(data.days);

    Matrix inner = Matrix::Zero(t, t);
    Matrix mean_day = Matrix::Zero(flows, t);
    Vector row_energy = Vector::Zero(flows);
    for (Index d = 0; d < data.days; ++d) {
        const auto day = data.traffic_history.middleCols(d * t, t);
        inner.noalias() += day.transpose() * day;
        mean_day += day;
        row_energy += day.rowwise().squaredNorm();
    }
    inner /= k;
    mean_day /= k;
    row_energy /= k;
    const double energy = row_energy.sum();
    if (!(energy > 0.0)) throw DegenerateTruthError("learn_RQ_RL: training traffic is zero");
    const double scale = static_cast<double>(rho) / std::sqrt(energy);

    Matrix r_q = scale * inner;
    Matrix r_l = scale * (mean_day * mean_day.transpose());
    r_l.diagonal() = scale * row_energy;
    r_q = condition_pd(0.5 * (r_q + r_q.transpose()), eps);
    r_l = condition_pd(0.5 * (r_l + r_l.transpose()), eps);
    equalize_traces(r_l, r_q);
    return {std::move(r_l), std::move(r_q)};
}

/// Analytic lag-tau autocorrelation gamma^2 R_b(tau) R_c(tau), tau = 0..T-1.
inline Vector burst_autocorrelation(const BurstParams &bp, Index times) {
    if (!(std::abs(bp.theta) < 1.0))
        throw InvalidArgument("burst_correlations: |theta| must be < 1");
    Vector ra(times);
    const double rc0 = bp.sigma_n * bp.sigma_n / (1.0 - bp.theta * bp.theta);
    for (Index tau = 0; tau < times; ++tau) {
        const double rc = std::pow(bp.theta, double(tau)) * rc0;
        const double rb = bp.nu * (1.0 - bp.nu) * std::pow(bp.alpha, double(tau)) + bp.nu * bp.nu;
        ra(tau) = bp.gamma_f * bp.gamma_f * rb * rc;
    }
    return ra;
}

/// Per-flow analytic sequences; flows outside the anomalous set get zeros.
inline std::vector<Vector> burst_correlations(const BurstParams &bp, Index flows,
                                              Index times) {
    const Vector ra = burst_autocorrelation(bp, times);
    std::vector<Vector> out(flows, Vector::Zero(times));
    for (int f : bp.anomalous_flows) {
        if (f < 0 || f >= flows)
            throw InvalidArgument("burst_correlations: anomalous flow out of range");
        out[f] = ra;
    }
    return out;
}

/// Splits each R_a sequence into Toeplitz first rows with equal magnitudes
/// sqrt|R_a| and the sign carried by R_c. Flows with R_a(0) = 0 get
/// identity rows scaled to the average lag-0 value of the other flows.
inline AnomalyBlocks split_RB_RC(const std::vector<Vector> &ra) {
    AnomalyBlocks blocks;
    blocks.rb_rows.reserve(ra.size());
    blocks.rc_rows.reserve(ra.size());
    double diag_sum = 0.0;
    int active = 0;
    for (const auto &seq : ra) {
        if (seq.size() == 0) throw InvalidArgument("split_RB_RC: empty sequence");
        if (seq(0) < 0.0) throw InvalidArgument("split_RB_RC: R_a(0) must be >= 0");
        Vector rb = seq.cwiseAbs().cwiseSqrt();
        Vector rc = rb;
        for (Index i = 0; i < seq.size(); ++i)
            if (seq(i) < 0.0) rc(i) = -rc(i);
            else if (seq(i) == 0.0) rc(i) = 0.0;
        if (seq(0) > 0.0) {
            diag_sum += rb(0);
            ++active;
        }
        blocks.rb_rows.push_back(std::move(rb));
        blocks.rc_rows.push_back(std::move(rc));
    }
    const double fill = active ? diag_sum / active : 1.0;
    for (std::size_t f = 0; f < ra.size(); ++f)
        if (ra[f](0) == 0.0) {
            blocks.rb_rows[f].setZero();
            blocks.rc_rows[f].setZero();
            blocks.rb_rows[f](0) = fill;
            blocks.rc_rows[f](0) = fill;
        }
    return blocks;
}

/// Sample autocovariance with 1/(KT - tau) normalisation, lags 0..T-1.
inline std::vector<Vector> learn_Ra_from_history(const TrainingData &data) {
    data.validate();
    const Matrix &a = data.anomaly_history;
    if (a.size() == 0) throw InvalidArgument("learn_Ra_from_history: no anomaly history");
    const Index n = a.cols();
    const Index lags = data.period;
    if (n <= lags - 1) throw InvalidArgument("learn_Ra_from_history: history shorter than T");
    std::vector<Vector> out(a.rows(), Vector::Zero(lags));
    for (Index f = 0; f < a.rows(); ++f) {
        const Vector row = a.row(f).transpose();
        for (Index tau = 0; tau < lags; ++tau)
            out[f](tau) = row.head(n - tau).dot(row.tail(n - tau)) / double(n - tau);
    }
    return out;
}

} // namespace nettomo
