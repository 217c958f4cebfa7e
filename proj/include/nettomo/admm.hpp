#pragma once

// ADMM solvers for the constrained nuclear + l1 program, its penalized
// least-squares version, and the outlier-robust variant.

#include <nettomo/core.hpp>
#include <nettomo/parallel.hpp>
#include <nettomo/prox.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nettomo {

struct AdmmConfig {
    /// Sparsity weight of the constrained program; <= 0 selects 1/sqrt(max(F,T)).
    double lambda = 0.0;
    double lambda_star = 1.0;
    double lambda_1 = 0.1;
    double lambda_y = 1.0;
    double lambda_z = 1.0;
    double c = 1.0;
    int max_iters = 2000;
    /// <= 0 selects 1e-6 * (1 + ||Y||_F).
    double tol_primal = 0.0;
    double tol_dual = 0.0;
    int threads = 1;
    /// Residual balancing of c (constrained solver only).
    bool adapt_c = false;

    void validate() const {
        if (!(c > 0.0)) throw InvalidArgument("AdmmConfig: c must be > 0");
        if (max_iters < 1) throw InvalidArgument("AdmmConfig: max_iters must be >= 1");
        if (lambda_star <= 0.0 || lambda_1 <= 0.0 || lambda_y <= 0.0 || lambda_z <= 0.0)
            throw InvalidArgument("AdmmConfig: weights must be > 0");
        if (threads < 1) throw InvalidArgument("AdmmConfig: threads must be >= 1");
    }

    double resolved_lambda(Index flows, Index times) const {
        return lambda > 0.0 ? lambda
                            : 1.0 / std::sqrt(static_cast<double>(std::max(flows, times)));
    }
};

struct ConvergenceReport {
    int iterations = 0;
    bool converged = false;
    double final_c = 0.0;
    std::vector<double> primal_residual;
    std::vector<double> dual_residual;
    std::vector<double> objective;
};

/// Primal and dual blocks of the split problem.
struct AdmmState {
    Matrix x, a, b, o;
    Matrix m_y, m_z, m_a, m_x;
    int iteration = 0;

    AdmmState(Index links, Index flows, Index times)
        : x(Matrix::Zero(flows, times)), a(Matrix::Zero(flows, times)),
          b(Matrix::Zero(flows, times)), o(Matrix::Zero(flows, times)),
          m_y(Matrix::Zero(links, times)), m_z(Matrix::Zero(flows, times)),
          m_a(Matrix::Zero(flows, times)), m_x(Matrix::Zero(flows, times)) {}
};

struct AdmmResult {
    Matrix x;
    Matrix a;
    ConvergenceReport report;
};

struct RobustResult {
    Matrix x;
    Matrix a;
    Matrix o_y;
    Matrix o_z;
    ConvergenceReport report;
};

/// Cached Cholesky factors of w I + Pi_t + R' Piy_t R, one per distinct
/// mask pattern.
class ColumnSolverSet {
public:
    ColumnSolverSet(const Matrix &r, const BoolArray &flow_mask, double weight = 1.0,
                    const BoolArray *link_mask = nullptr)
        : flows_(r.cols()), column_to_factor_(flow_mask.cols()) {
        if (flow_mask.rows() != r.cols())
            throw DimensionError("ColumnSolverSet: mask rows != F");
        if (link_mask && (link_mask->rows() != r.rows() ||
                          link_mask->cols() != flow_mask.cols()))
            throw DimensionError("ColumnSolverSet: link mask shape != L x T");
        if (!(weight > 0.0)) throw InvalidArgument("ColumnSolverSet: weight must be > 0");
        const Matrix rtr = r.transpose() * r;
        std::map<std::vector<bool>, std::size_t> seen;
        for (Index t = 0; t < flow_mask.cols(); ++t) {
            std::vector<bool> key(flow_mask.rows() + (link_mask ? r.rows() : 0));
            for (Index f = 0; f < flow_mask.rows(); ++f) key[f] = flow_mask(f, t);
            if (link_mask)
                for (Index l = 0; l < r.rows(); ++l) key[flow_mask.rows() + l] = (*link_mask)(l, t);
            auto it = seen.find(key);
            if (it == seen.end()) {
                Matrix m = link_mask
                               ? Matrix(r.transpose() * link_mask->col(t).cast<double>().matrix().asDiagonal() * r)
                               : rtr;
                m.diagonal().array() += weight;
                for (Index f = 0; f < flows_; ++f)
                    if (flow_mask(f, t)) m(f, f) += 1.0;
                factors_.emplace_back(m);
                it = seen.emplace(std::move(key), factors_.size() - 1).first;
            }
            column_to_factor_[t] = it->second;
        }
    }

    Index columns() const noexcept { return static_cast<Index>(column_to_factor_.size()); }
    std::size_t factor_count() const noexcept { return factors_.size(); }

    Vector apply(Index t, const Vector &v) const {
        if (v.size() != flows_) throw DimensionError("ColumnSolverSet::apply: size != F");
        return factors_[column_to_factor_.at(t)].solve(v);
    }

    /// Column t of the result is the system of column t applied to rhs.col(t).
    Matrix solve(const Matrix &rhs, int threads = 1) const {
        detail::require_same_shape(rhs, flows_, columns(), "ColumnSolverSet::solve");
        Matrix out(rhs.rows(), rhs.cols());
        parallel_for(rhs.cols(), threads, [&](std::ptrdiff_t t) {
            out.col(t) = factors_[column_to_factor_[t]].solve(rhs.col(t));
        });
        return out;
    }

private:
    Index flows_;
    std::vector<Eigen::LLT<Matrix>> factors_;
    std::vector<std::size_t> column_to_factor_;
};

/// Handles applying (I + Pi_t + R'R)^{-1} per column.
inline ColumnSolverSet precompute_column_inverses(const RoutingMatrix &r,
                                                  const SamplingMask &mask) {
    return ColumnSolverSet(r.entries(), mask.array());
}

/// 1/2||Y - R(X+A)||^2 + 1/2||Z - P(X+A)||^2 + ls ||X||_* + l1 ||A||_1.
inline double p1_objective(const Observations &obs, const RoutingMatrix &r,
                           const Matrix &x, const Matrix &a, double lambda_star,
                           double lambda_1) {
    const Matrix s = x + a;
    return 0.5 * (obs.link_counts() - r.entries() * s).squaredNorm() +
           0.5 * (obs.flow_counts() - project_sampling(obs.mask(), s)).squaredNorm() +
           lambda_star * nuclear_norm(x) + lambda_1 * l1_norm(a);
}

/// Objective of the robust program; outlier blocks outside their masks are
/// ignored by the data terms.
inline double p6_objective(const Observations &obs, const RoutingMatrix &r,
                           const Matrix &x, const Matrix &a, const Matrix &o_y,
                           const Matrix &o_z, const AdmmConfig &cfg) {
    const Matrix s = x + a;
    const BoolArray link_mask = obs.link_mask()
                                    ? obs.link_mask()->array()
                                    : BoolArray::Constant(obs.links(), obs.times(), true);
    return 0.5 * project_sampling(link_mask, obs.link_counts() - r.entries() * s - o_y)
                     .squaredNorm() +
           0.5 * project_sampling(obs.mask(), obs.flow_counts() - s - o_z).squaredNorm() +
           cfg.lambda_star * nuclear_norm(x) + cfg.lambda_1 * l1_norm(a) +
           cfg.lambda_y * l1_norm(o_y) + cfg.lambda_z * l1_norm(o_z);
}

namespace detail {

inline double default_tol(double tol, const Matrix &y) {
    return tol > 0.0 ? tol : 1e-6 * (1.0 + y.norm());
}

inline void check_finite(const AdmmState &s, const char *who) {
    if (!s.x.allFinite() || !s.a.allFinite() || !s.o.allFinite() || !s.b.allFinite())
        throw DivergenceError(std::string(who) + ": non-finite iterate", s.iteration);
}

} // namespace detail

/// Algorithm for min ||X||_* + lambda ||A||_1 subject to
/// Y = R(X+A), Z = P_Pi(X+A).
inline AdmmResult admm_solve_p2(const Observations &obs, const RoutingMatrix &r,
                                const AdmmConfig &cfg) {
    cfg.validate();
    obs.require_compatible(r);
    const Matrix &rm = r.entries();
    const Matrix &y = obs.link_counts();
    const Matrix &z = obs.flow_counts();
    const BoolArray &pi = obs.mask().array();
    const Index flows = obs.flows(), times = obs.times();
    const double lambda = cfg.resolved_lambda(flows, times);
    const double tol_p = detail::default_tol(cfg.tol_primal, y);
    const double tol_d = detail::default_tol(cfg.tol_dual, y);

    const ColumnSolverSet h(rm, pi);
    const Matrix rt = rm.transpose();
    const Matrix rtr = rt * rm;
    const Matrix data = z + rt * y;
    auto gram = [&](const Matrix &m) -> Matrix {
        return rtr * m + project_sampling(pi, m);
    };

    AdmmState s(obs.links(), flows, times);
    ConvergenceReport rep;
    double c = cfg.c;
    for (int k = 0; k < cfg.max_iters; ++k) {
        s.iteration = k + 1;
        const Matrix ob = s.o + s.b;
        s.m_y += c * (y - rm * ob);
        s.m_z += c * (z - project_sampling(pi, ob));
        s.m_a += c * (s.b - s.a);
        s.m_x += c * (s.o - s.x);

        const Matrix x_prev = s.x, a_prev = s.a, o_prev = s.o, b_prev = s.b;
        const Matrix mult = rt * s.m_y + project_sampling(pi, s.m_z);

        s.a = soft_threshold(s.b + s.m_a / c, lambda / c);
        s.o = h.solve(s.x + data - gram(s.b) + (mult - s.m_x) / c, cfg.threads);
        s.x = svt(s.o + s.m_x / c, 1.0 / c);
        s.b = h.solve(s.a + data - gram(s.o) + (mult - s.m_a) / c, cfg.threads);
        detail::check_finite(s, "admm_solve_p2");

        const Matrix ob_new = s.o + s.b;
        const double r_y = (y - rm * ob_new).norm();
        const double r_z = (z - project_sampling(pi, ob_new)).norm();
        const double r_a = (s.b - s.a).norm();
        const double r_x = (s.o - s.x).norm();
        const double primal = std::max({r_y, r_z, r_a, r_x});
        const double change = std::max({(s.x - x_prev).norm(), (s.a - a_prev).norm(),
                                        (s.o - o_prev).norm(), (s.b - b_prev).norm()});
        rep.primal_residual.push_back(primal);
        rep.dual_residual.push_back(change);
        rep.iterations = k + 1;
        if (primal < tol_p && change < tol_d) {
            rep.converged = true;
            break;
        }
        if (cfg.adapt_c && (k + 1) % 10 == 0) {
            // the system matrices do not depend on c, so rescaling is free
            const double dual = c * std::max((s.o - o_prev).norm(), (s.b - b_prev).norm());
            if (primal > 10.0 * dual) c *= 2.0;
            else if (dual > 10.0 * primal) c /= 2.0;
        }
    }
    rep.final_c = c;
    return {std::move(s.x), std::move(s.a), std::move(rep)};
}

namespace detail {

/// Shared loop of the penalized and robust solvers. The (O,B) pair is
/// updated jointly: with p = X - Mx/c and q = A - Ma/c, the sum s = O+B
/// solves (R'Piy R + Pi + c/2 I) s = R'Piy y + Pi z + c/2 (p+q) and the
/// difference is O-B = p-q.
inline RobustResult penalized_admm(const Observations &obs, const RoutingMatrix &r,
                                   const AdmmConfig &cfg, bool robust) {
    cfg.validate();
    obs.require_compatible(r);
    const Matrix &rm = r.entries();
    const Matrix &y = obs.link_counts();
    const Matrix &z = obs.flow_counts();
    const BoolArray &pi = obs.mask().array();
    const Index links = obs.links(), flows = obs.flows(), times = obs.times();
    const BoolArray link_mask = obs.link_mask()
                                    ? obs.link_mask()->array()
                                    : BoolArray::Constant(links, times, true);
    const bool partial_links = !link_mask.all();
    const double tol_p = default_tol(cfg.tol_primal, y);
    const double tol_d = default_tol(cfg.tol_dual, y);
    const double c = cfg.c;

    const ColumnSolverSet h(rm, pi, c / 2.0, partial_links ? &link_mask : nullptr);
    const Matrix rt = rm.transpose();

    AdmmState s(links, flows, times);
    Matrix o_y = Matrix::Zero(links, times);
    Matrix o_z = Matrix::Zero(flows, times);
    ConvergenceReport rep;
    rep.final_c = c;
    for (int k = 0; k < cfg.max_iters; ++k) {
        s.iteration = k + 1;
        const Matrix x_prev = s.x, a_prev = s.a, o_prev = s.o, b_prev = s.b;
        const Matrix oy_prev = o_y, oz_prev = o_z;

        s.x = svt(s.o + s.m_x / c, cfg.lambda_star / c);
        s.a = soft_threshold(s.b + s.m_a / c, cfg.lambda_1 / c);

        const Matrix p = s.x - s.m_x / c;
        const Matrix q = s.a - s.m_a / c;
        const Matrix y_eff = project_sampling(link_mask, y - o_y);
        const Matrix z_eff = project_sampling(pi, z - o_z);
        const Matrix sum = h.solve(rt * y_eff + z_eff + (c / 2.0) * (p + q), cfg.threads);
        const Matrix diff = p - q;
        s.o = 0.5 * (sum + diff);
        s.b = 0.5 * (sum - diff);

        s.m_x += c * (s.o - s.x);
        s.m_a += c * (s.b - s.a);

        if (robust) {
            o_y = soft_threshold(project_sampling(link_mask, y - rm * sum), cfg.lambda_y);
            o_z = soft_threshold(project_sampling(pi, z - sum), cfg.lambda_z);
        }
        check_finite(s, robust ? "admm_solve_p6" : "admm_solve_p1");

        const double primal = std::max((s.o - s.x).norm(), (s.b - s.a).norm());
        double change = std::max({(s.x - x_prev).norm(), (s.a - a_prev).norm(),
                                  (s.o - o_prev).norm(), (s.b - b_prev).norm()});
        if (robust)
            change = std::max({change, (o_y - oy_prev).norm(), (o_z - oz_prev).norm()});
        rep.primal_residual.push_back(primal);
        rep.dual_residual.push_back(change);
        rep.iterations = k + 1;
        if (primal < tol_p && change < tol_d) {
            rep.converged = true;
            break;
        }
    }
    RobustResult out{std::move(s.x), std::move(s.a), std::move(o_y), std::move(o_z),
                     std::move(rep)};
    out.report.objective.push_back(
        robust ? p6_objective(obs, r, out.x, out.a, out.o_y, out.o_z, cfg)
               : p1_objective(obs, r, out.x, out.a, cfg.lambda_star, cfg.lambda_1));
    return out;
}

} // namespace detail

/// min 1/2||Y - R(X+A)||^2 + 1/2||Z - P_Pi(X+A)||^2 + ls ||X||_* + l1 ||A||_1.
inline AdmmResult admm_solve_p1(const Observations &obs, const RoutingMatrix &r,
                                const AdmmConfig &cfg) {
    Observations plain(obs.link_counts(), obs.flow_counts(), obs.mask());
    auto res = detail::penalized_admm(plain, r, cfg, false);
    return {std::move(res.x), std::move(res.a), std::move(res.report)};
}

/// Penalized estimator with missing link counts and sparse outliers on the
/// link and flow measurements.
inline RobustResult admm_solve_p6(const Observations &obs, const RoutingMatrix &r,
                                  const AdmmConfig &cfg) {
    return detail::penalized_admm(obs, r, cfg, true);
}

} // namespace nettomo
