#pragma once

// Shared domain types, linear operators and error metrics.

#include <nettomo/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nettomo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Absolute tolerance for every "= 0" invariant.
inline constexpr double kZeroTol = 1e-9;

namespace detail {

inline void require_same_shape(const Matrix &a, Index rows, Index cols,
                               const char *what) {
    if (a.rows() != rows || a.cols() != cols)
        throw DimensionError(std::string(what) + ": expected " +
                             std::to_string(rows) + "x" + std::to_string(cols) +
                             ", got " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()));
}

inline bool all_finite(const Matrix &m) { return m.allFinite(); }

} // namespace detail

struct Link {
    int from = 0;
    int to = 0;
    friend bool operator==(const Link &, const Link &) = default;
};

struct OdPair {
    int origin = 0;
    int destination = 0;
    friend bool operator==(const OdPair &, const OdPair &) = default;
};

/// Directed router graph. Coordinates are present for generated graphs.
class Topology {
public:
    Topology() = default;
    Topology(int node_count, std::vector<Link> links,
             std::vector<std::pair<double, double>> coords = {})
        : node_count_(node_count), links_(std::move(links)),
          coords_(std::move(coords)) {
        if (node_count_ < 2)
            throw InvalidArgument("Topology: need at least two nodes");
        for (const auto &l : links_) {
            if (l.from < 0 || l.from >= node_count_ || l.to < 0 ||
                l.to >= node_count_)
                throw InvalidArgument("Topology: link endpoint out of range");
            if (l.from == l.to)
                throw InvalidArgument("Topology: self-loop link");
        }
        if (!coords_.empty() && static_cast<int>(coords_.size()) != node_count_)
            throw InvalidArgument("Topology: coordinate count != node count");
    }

    int node_count() const noexcept { return node_count_; }
    Index link_count() const noexcept { return static_cast<Index>(links_.size()); }
    const std::vector<Link> &links() const noexcept { return links_; }
    const std::vector<std::pair<double, double>> &coords() const noexcept {
        return coords_;
    }
    bool has_coords() const noexcept { return !coords_.empty(); }

    /// Number of weakly-connected components ignoring direction.
    int component_count() const {
        std::vector<int> parent(node_count_);
        for (int i = 0; i < node_count_; ++i) parent[i] = i;
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const auto &l : links_) parent[find(l.from)] = find(l.to);
        int count = 0;
        for (int i = 0; i < node_count_; ++i) count += find(i) == i;
        return count;
    }

    bool connected() const { return component_count() == 1; }

private:
    int node_count_ = 0;
    std::vector<Link> links_;
    std::vector<std::pair<double, double>> coords_;
};

/// L x F matrix of per-link flow fractions.
///
/// When `links` and `od_pairs` are supplied the matrix is tied to a graph
/// and flow conservation can be checked; otherwise it is an abstract
/// linear map (used by diagnostics on hand-built instances).
class RoutingMatrix {
public:
    RoutingMatrix() = default;

    explicit RoutingMatrix(Matrix entries, std::vector<Link> links = {},
                           std::vector<OdPair> od_pairs = {},
                           std::vector<int> paths_achieved = {})
        : entries_(std::move(entries)), links_(std::move(links)),
          od_pairs_(std::move(od_pairs)),
          paths_achieved_(std::move(paths_achieved)) {
        if (!entries_.allFinite())
            throw InvalidArgument("RoutingMatrix: non-finite entry");
        if (entries_.size() > 0 &&
            (entries_.minCoeff() < -kZeroTol || entries_.maxCoeff() > 1 + kZeroTol))
            throw InvalidArgument("RoutingMatrix: entries must lie in [0,1]");
        if (!links_.empty() && static_cast<Index>(links_.size()) != entries_.rows())
            throw DimensionError("RoutingMatrix: link list size != row count");
        if (!od_pairs_.empty() &&
            static_cast<Index>(od_pairs_.size()) != entries_.cols())
            throw DimensionError("RoutingMatrix: OD list size != column count");
    }

    const Matrix &entries() const noexcept { return entries_; }
    Index link_count() const noexcept { return entries_.rows(); }
    Index flow_count() const noexcept { return entries_.cols(); }
    const std::vector<Link> &links() const noexcept { return links_; }
    const std::vector<OdPair> &od_pairs() const noexcept { return od_pairs_; }
    const std::vector<int> &paths_achieved() const noexcept {
        return paths_achieved_;
    }

    /// Largest |inflow - outflow| over every flow and every node that is
    /// neither the flow's origin nor destination. Zero for abstract matrices.
    double flow_conservation_violation(int node_count) const {
        if (links_.empty() || od_pairs_.empty()) return 0.0;
        double worst = 0.0;
        for (Index f = 0; f < flow_count(); ++f) {
            std::vector<double> balance(node_count, 0.0);
            for (Index l = 0; l < link_count(); ++l) {
                const double r = entries_(l, f);
                balance[links_[l].to] += r;
                balance[links_[l].from] -= r;
            }
            for (int n = 0; n < node_count; ++n) {
                if (n == od_pairs_[f].origin || n == od_pairs_[f].destination)
                    continue;
                worst = std::max(worst, std::abs(balance[n]));
            }
        }
        return worst;
    }

    /// dim of the nullspace of R acting on one column: F - rank(R).
    Index nullspace_dim(double rel_tol = 1e-10) const {
        if (entries_.size() == 0) return flow_count();
        Eigen::JacobiSVD<Matrix> svd(entries_);
        const auto &s = svd.singularValues();
        const double cut = rel_tol * std::max(1.0, s.size() ? s(0) : 0.0);
        Index rank = (s.array() > cut).count();
        return flow_count() - rank;
    }

private:
    Matrix entries_;
    std::vector<Link> links_;
    std::vector<OdPair> od_pairs_;
    std::vector<int> paths_achieved_;
};

struct TrafficMatrices {
    Matrix nominal;
    Matrix anomalies;

    TrafficMatrices() = default;
    TrafficMatrices(Matrix x, Matrix a) : nominal(std::move(x)), anomalies(std::move(a)) {
        detail::require_same_shape(anomalies, nominal.rows(), nominal.cols(),
                                   "TrafficMatrices anomalies");
        if (!nominal.allFinite() || !anomalies.allFinite())
            throw InvalidArgument("TrafficMatrices: non-finite entry");
    }

    Index flows() const noexcept { return nominal.rows(); }
    Index times() const noexcept { return nominal.cols(); }
};

/// F x T observation pattern; true = (f,t) was sampled.
class SamplingMask {
public:
    SamplingMask() = default;
    explicit SamplingMask(BoolArray mask) : mask_(std::move(mask)) {}

    static SamplingMask full(Index rows, Index cols) {
        return SamplingMask(BoolArray::Constant(rows, cols, true));
    }
    static SamplingMask empty(Index rows, Index cols) {
        return SamplingMask(BoolArray::Constant(rows, cols, false));
    }

    const BoolArray &array() const noexcept { return mask_; }
    Index rows() const noexcept { return mask_.rows(); }
    Index cols() const noexcept { return mask_.cols(); }
    bool operator()(Index i, Index j) const { return mask_(i, j); }
    Index observed_count() const { return mask_.count(); }
    double observed_fraction() const {
        return mask_.size() ? static_cast<double>(observed_count()) /
                                  static_cast<double>(mask_.size())
                            : 0.0;
    }
    /// 0/1 matrix form.
    Matrix as_matrix() const { return mask_.cast<double>().matrix(); }
    SamplingMask complement() const { return SamplingMask(!mask_); }

private:
    BoolArray mask_;
};

/// Link counts Y, masked flow counts Z_Pi and the mask itself. The optional
/// link mask marks which link counts are available (robust estimator only).
class Observations {
public:
    Observations() = default;
    Observations(Matrix link_counts, Matrix flow_counts, SamplingMask mask,
                 std::optional<SamplingMask> link_mask = std::nullopt)
        : y_(std::move(link_counts)), z_(std::move(flow_counts)),
          mask_(std::move(mask)), link_mask_(std::move(link_mask)) {
        detail::require_same_shape(z_, mask_.rows(), mask_.cols(),
                                   "Observations flow counts");
        if (y_.cols() != z_.cols())
            throw DimensionError("Observations: Y and Z_Pi have different T");
        if (link_mask_)
            detail::require_same_shape(link_mask_->array().cast<double>().matrix(),
                                       y_.rows(), y_.cols(), "Observations link mask");
        for (Index t = 0; t < z_.cols(); ++t)
            for (Index f = 0; f < z_.rows(); ++f)
                if (!mask_(f, t) && z_(f, t) != 0.0)
                    throw InvalidArgument(
                        "Observations: Z_Pi must be zero outside the mask");
    }

    const Matrix &link_counts() const noexcept { return y_; }
    const Matrix &flow_counts() const noexcept { return z_; }
    const SamplingMask &mask() const noexcept { return mask_; }
    const std::optional<SamplingMask> &link_mask() const noexcept {
        return link_mask_;
    }
    Index links() const noexcept { return y_.rows(); }
    Index flows() const noexcept { return z_.rows(); }
    Index times() const noexcept { return z_.cols(); }

    void require_compatible(const RoutingMatrix &r) const {
        if (r.link_count() != links() || r.flow_count() != flows())
            throw DimensionError("Observations do not match routing matrix " +
                                 std::to_string(r.link_count()) + "x" +
                                 std::to_string(r.flow_count()));
    }

private:
    Matrix y_;
    Matrix z_;
    SamplingMask mask_;
    std::optional<SamplingMask> link_mask_;
};

/// Column/row spaces of the nominal truth and support of the anomalies.
class SubspaceBundle {
public:
    SubspaceBundle(Matrix u0, Matrix v0, BoolArray support)
        : u0_(std::move(u0)), v0_(std::move(v0)), support_(std::move(support)) {
        if (u0_.cols() != v0_.cols())
            throw DimensionError("SubspaceBundle: U0 and V0 ranks differ");
        if (support_.rows() != u0_.rows() || support_.cols() != v0_.rows())
            throw DimensionError("SubspaceBundle: support shape != F x T");
        const Index r = u0_.cols();
        const Matrix eye = Matrix::Identity(r, r);
        if (r > 0 && ((u0_.transpose() * u0_ - eye).cwiseAbs().maxCoeff() > 1e-10 ||
                      (v0_.transpose() * v0_ - eye).cwiseAbs().maxCoeff() > 1e-10))
            throw InvalidArgument("SubspaceBundle: U0/V0 not orthonormal");
    }

    /// Builds the bundle from a truth pair. Singular values at or below
    /// rel_tol * sigma_max are treated as zero.
    static SubspaceBundle from_truth(const Matrix &x0, const Matrix &a0,
                                     double rel_tol = 1e-10) {
        detail::require_same_shape(a0, x0.rows(), x0.cols(), "from_truth A0");
        Eigen::JacobiSVD<Matrix> svd(x0, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto &s = svd.singularValues();
        Index r = 0;
        if (s.size() > 0 && s(0) > 0)
            r = (s.array() > rel_tol * s(0)).count();
        return SubspaceBundle(svd.matrixU().leftCols(r), svd.matrixV().leftCols(r),
                              a0.array() != 0.0);
    }

    const Matrix &u0() const noexcept { return u0_; }
    const Matrix &v0() const noexcept { return v0_; }
    const BoolArray &support() const noexcept { return support_; }
    Index rank() const noexcept { return u0_.cols(); }
    Index flows() const noexcept { return u0_.rows(); }
    Index times() const noexcept { return v0_.rows(); }

private:
    Matrix u0_;
    Matrix v0_;
    BoolArray support_;
};

// ---------------------------------------------------------------------------
// Operators

inline Matrix apply_routing(const Matrix &r, const Matrix &m) {
    if (r.cols() != m.rows())
        throw DimensionError("apply_routing: R has " + std::to_string(r.cols()) +
                             " columns but M has " + std::to_string(m.rows()) +
                             " rows");
    return r * m;
}

inline Matrix apply_routing(const RoutingMatrix &r, const Matrix &m) {
    return apply_routing(r.entries(), m);
}

inline Matrix project_sampling(const SamplingMask &mask, const Matrix &m) {
    detail::require_same_shape(m, mask.rows(), mask.cols(), "project_sampling");
    return mask.array().select(m.array(), 0.0).matrix();
}

inline Matrix project_sampling(const BoolArray &mask, const Matrix &m) {
    detail::require_same_shape(m, mask.rows(), mask.cols(), "project_sampling");
    return mask.select(m.array(), 0.0).matrix();
}

/// Orthogonal projector onto {U0 W1' + W2 V0'}.
inline Matrix project_phi(const SubspaceBundle &b, const Matrix &z) {
    detail::require_same_shape(z, b.flows(), b.times(), "project_phi");
    const Matrix &u = b.u0();
    const Matrix &v = b.v0();
    const Matrix ut_z = u.transpose() * z;          // r x T
    const Matrix z_v = z * v;                       // F x r
    const Matrix pu_z = u * ut_z;                   // P_U Z
    const Matrix z_pv = z_v * v.transpose();        // Z P_V
    const Matrix pu_z_pv = u * (ut_z * v) * v.transpose();
    return pu_z + z_pv - pu_z_pv;
}

inline Matrix project_phi_perp(const SubspaceBundle &b, const Matrix &z) {
    return z - project_phi(b, z);
}

struct ErrorMetrics {
    double e_x = 0.0;
    double e_a = 0.0;
    double e_xa = 0.0;
};

inline ErrorMetrics relative_errors(const TrafficMatrices &estimate,
                                    const TrafficMatrices &truth) {
    detail::require_same_shape(estimate.nominal, truth.flows(), truth.times(),
                               "relative_errors nominal");
    detail::require_same_shape(estimate.anomalies, truth.flows(), truth.times(),
                               "relative_errors anomalies");
    const double nx = truth.nominal.norm();
    const double na = truth.anomalies.norm();
    if (nx == 0.0 || na == 0.0)
        throw DegenerateTruthError(nx == 0.0 ? "relative_errors: nominal truth is zero"
                                             : "relative_errors: anomaly truth is zero");
    ErrorMetrics e;
    e.e_x = (estimate.nominal - truth.nominal).norm() / nx;
    e.e_a = (estimate.anomalies - truth.anomalies).norm() / na;
    e.e_xa = e.e_x + e.e_a;
    return e;
}

/// Trace inner product <A, B>.
inline double inner(const Matrix &a, const Matrix &b) {
    return (a.array() * b.array()).sum();
}

inline double spectral_norm(const Matrix &m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

inline double max_abs(const Matrix &m) {
    return m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
}

} // namespace nettomo
