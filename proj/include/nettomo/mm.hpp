#pragma once

// Correlation-aware bilinear estimator X = L Q', A = B .* C, solved by
// block majorization-minimization (one gradient step per block with a
// Hessian-bounding step size).

#include <nettomo/core.hpp>
#include <nettomo/correlation.hpp>
#include <nettomo/synthgen.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nettomo {

struct MmConfig {
    Index rho = 5;
    double lambda_star = 1.0;
    double lambda_1 = 1.0;
    int max_iters = 5000;
    double tol = 1e-8;
    double step_safety = 1.01;
    bool accelerate = false;
    /// Upper limit on any step constant; exceeding it aborts.
    double step_cap = 1e15;
    /// Eigenvalue floor applied to the Toeplitz anomaly blocks.
    double pd_floor = kDefaultPdFloor;

    void validate() const {
        if (rho < 1) throw InvalidArgument("MmConfig: rho must be >= 1");
        if (lambda_star <= 0.0 || lambda_1 <= 0.0)
            throw InvalidArgument("MmConfig: weights must be > 0");
        if (max_iters < 1) throw InvalidArgument("MmConfig: max_iters must be >= 1");
        if (!(tol > 0.0)) throw InvalidArgument("MmConfig: tol must be > 0");
        if (!(step_safety >= 1.0)) throw InvalidArgument("MmConfig: step_safety must be >= 1");
        if (!(pd_floor > 0.0)) throw InvalidArgument("MmConfig: pd_floor must be > 0");
    }
};

struct FactorState {
    Matrix l;
    Matrix q;
    Matrix b;
    Matrix c;

    Matrix nominal() const { return l * q.transpose(); }
    Matrix anomalies() const { return b.cwiseProduct(c); }
    bool finite() const {
        return l.allFinite() && q.allFinite() && b.allFinite() && c.allFinite();
    }
};

enum class Block { L, Q, B, C };

inline const char *block_name(Block b) {
    switch (b) {
    case Block::L: return "L";
    case Block::Q: return "Q";
    case Block::B: return "B";
    case Block::C: return "C";
    }
    return "?";
}

/// Factorized correlation matrices: Cholesky factors of R_L, R_Q and one
/// factor per distinct Toeplitz block.
class CorrelationFactors {
public:
    CorrelationFactors(const CorrelationSet &cs, double pd_floor = kDefaultPdFloor) {
        cs.validate();
        r_l_ = factor_checked(cs.r_l, pd_floor, "R_L", inv_norm_l_);
        r_q_ = factor_checked(cs.r_q, pd_floor, "R_Q", inv_norm_q_);
        block_of_b_ = dedupe(cs.anomaly_blocks.rb_rows, pd_floor, inv_norm_b_);
        block_of_c_ = dedupe(cs.anomaly_blocks.rc_rows, pd_floor, inv_norm_c_);
        flows_ = cs.flows();
        times_ = cs.times();
    }

    Index flows() const noexcept { return flows_; }
    Index times() const noexcept { return times_; }
    std::size_t distinct_blocks() const noexcept { return blocks_.size(); }

    Matrix solve_l(const Matrix &m) const { return r_l_.solve(m); }
    Matrix solve_q(const Matrix &m) const { return r_q_.solve(m); }

    /// Row f of the result is R^{(f)-1} applied to row f of m.
    Matrix solve_b_rows(const Matrix &m) const { return solve_rows(m, block_of_b_); }
    Matrix solve_c_rows(const Matrix &m) const { return solve_rows(m, block_of_c_); }

    double inv_norm_l() const noexcept { return inv_norm_l_; }
    double inv_norm_q() const noexcept { return inv_norm_q_; }
    double inv_norm_b() const noexcept { return inv_norm_b_; }
    double inv_norm_c() const noexcept { return inv_norm_c_; }

private:
    struct Factor {
        Eigen::LLT<Matrix> llt;
        std::vector<Index> members;
    };

    static Eigen::LLT<Matrix> factor_checked(const Matrix &m, double floor,
                                             const char *name, double &inv_norm) {
        detail::require_symmetric(m, name);
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
        if (!(es.eigenvalues()(0) > 0.0))
            throw InvalidArgument(std::string("correlation matrix ") + name +
                                  " is not positive definite");
        const Matrix conditioned = condition_pd(m, floor);
        Eigen::SelfAdjointEigenSolver<Matrix> es2(conditioned, Eigen::EigenvaluesOnly);
        inv_norm = 1.0 / es2.eigenvalues()(0);
        return Eigen::LLT<Matrix>(conditioned);
    }

    std::vector<std::size_t> dedupe(const std::vector<Vector> &rows, double floor,
                                    double &inv_norm) {
        std::map<std::vector<double>, std::size_t> seen;
        std::vector<std::size_t> index(rows.size());
        inv_norm = 0.0;
        for (std::size_t f = 0; f < rows.size(); ++f) {
            std::vector<double> key(rows[f].data(), rows[f].data() + rows[f].size());
            auto it = seen.find(key);
            if (it == seen.end()) {
                const Matrix conditioned = condition_pd(toeplitz(rows[f]), floor);
                Eigen::SelfAdjointEigenSolver<Matrix> es(conditioned, Eigen::EigenvaluesOnly);
                block_inv_norm_.push_back(1.0 / es.eigenvalues()(0));
                blocks_.push_back({Eigen::LLT<Matrix>(conditioned), {}});
                it = seen.emplace(std::move(key), blocks_.size() - 1).first;
            }
            index[f] = it->second;
            inv_norm = std::max(inv_norm, block_inv_norm_[it->second]);
        }
        return index;
    }

    Matrix solve_rows(const Matrix &m, const std::vector<std::size_t> &which) const {
        Matrix out(m.rows(), m.cols());
        std::vector<std::vector<Index>> groups(blocks_.size());
        for (Index f = 0; f < m.rows(); ++f) groups[which[f]].push_back(f);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].empty()) continue;
            Matrix cols(m.cols(), static_cast<Index>(groups[g].size()));
            for (std::size_t i = 0; i < groups[g].size(); ++i)
                cols.col(static_cast<Index>(i)) = m.row(groups[g][i]).transpose();
            const Matrix solved = blocks_[g].llt.solve(cols);
            for (std::size_t i = 0; i < groups[g].size(); ++i)
                out.row(groups[g][i]) = solved.col(static_cast<Index>(i)).transpose();
        }
        return out;
    }

    Eigen::LLT<Matrix> r_l_;
    Eigen::LLT<Matrix> r_q_;
    std::vector<Factor> blocks_;
    std::vector<double> block_inv_norm_;
    std::vector<std::size_t> block_of_b_;
    std::vector<std::size_t> block_of_c_;
    double inv_norm_l_ = 0.0, inv_norm_q_ = 0.0, inv_norm_b_ = 0.0, inv_norm_c_ = 0.0;
    Index flows_ = 0, times_ = 0;
};

namespace detail {

inline double top_eigenvalue(const Matrix &sym) {
    if (sym.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return std::max(0.0, es.eigenvalues()(es.eigenvalues().size() - 1));
}

inline void require_state_shape(const FactorState &s, const Observations &obs) {
    const Index f = obs.flows(), t = obs.times();
    if (s.l.rows() != f || s.q.rows() != t || s.l.cols() != s.q.cols() || s.b.rows() != f ||
        s.b.cols() != t || s.c.rows() != f || s.c.cols() != t)
        throw DimensionError("FactorState does not match the observation grid");
}

} // namespace detail

/// Phi_y = R(LQ' + B.*C) - Y and Phi_z = P_Pi(LQ' + B.*C) - Z_Pi.
inline std::pair<Matrix, Matrix> residuals(const FactorState &s, const Observations &obs,
                                           const RoutingMatrix &r) {
    obs.require_compatible(r);
    detail::require_state_shape(s, obs);
    const Matrix est = s.nominal() + s.anomalies();
    return {r.entries() * est - obs.link_counts(),
            project_sampling(obs.mask(), est) - obs.flow_counts()};
}

inline double p5_objective(const FactorState &s, const Observations &obs,
                           const RoutingMatrix &r, const CorrelationFactors &cf,
                           const MmConfig &cfg) {
    const auto [phi_y, phi_z] = residuals(s, obs, r);
    const double data = 0.5 * (phi_y.squaredNorm() + phi_z.squaredNorm());
    const double nominal = inner(s.l, cf.solve_l(s.l)) + inner(s.q, cf.solve_q(s.q));
    const double anomal = inner(s.b, cf.solve_b_rows(s.b)) + inner(s.c, cf.solve_c_rows(s.c));
    return data + 0.5 * cfg.lambda_star * nominal + 0.5 * cfg.lambda_1 * anomal;
}

inline double p5_objective(const FactorState &s, const Observations &obs,
                           const RoutingMatrix &r, const CorrelationSet &cs,
                           const MmConfig &cfg) {
    return p5_objective(s, obs, r, CorrelationFactors(cs, cfg.pd_floor), cfg);
}

/// Frobenius-regularized bilinear objective (all correlations identity).
inline double p4_objective(const FactorState &s, const Observations &obs,
                           const RoutingMatrix &r, double lambda_star, double lambda_1) {
    const auto [phi_y, phi_z] = residuals(s, obs, r);
    return 0.5 * (phi_y.squaredNorm() + phi_z.squaredNorm()) +
           0.5 * lambda_star * (s.l.squaredNorm() + s.q.squaredNorm()) +
           0.5 * lambda_1 * (s.b.squaredNorm() + s.c.squaredNorm());
}

/// Gradient of the objective with respect to one block.
inline Matrix block_gradient(Block which, const FactorState &s, const Observations &obs,
                             const RoutingMatrix &r, const CorrelationFactors &cf,
                             const MmConfig &cfg) {
    const auto [phi_y, phi_z] = residuals(s, obs, r);
    const Matrix f = r.entries().transpose() * phi_y + phi_z;
    switch (which) {
    case Block::L: return f * s.q + cfg.lambda_star * cf.solve_l(s.l);
    case Block::Q: return f.transpose() * s.l + cfg.lambda_star * cf.solve_q(s.q);
    case Block::B: return s.c.cwiseProduct(f) + cfg.lambda_1 * cf.solve_b_rows(s.b);
    case Block::C: return s.b.cwiseProduct(f) + cfg.lambda_1 * cf.solve_c_rows(s.c);
    }
    return {};
}

/// Upper bound on the spectral norm of a block Hessian, times step_safety.
/// `rtr_norm` is sigma_max(R'R).
inline double step_bound(Block which, const FactorState &s, double rtr_norm,
                         const CorrelationFactors &cf, const MmConfig &cfg) {
    const double data_gain = rtr_norm + 1.0;
    double mu = 0.0;
    switch (which) {
    case Block::L:
        mu = data_gain * detail::top_eigenvalue(s.q.transpose() * s.q) +
             cfg.lambda_star * cf.inv_norm_l();
        break;
    case Block::Q:
        mu = data_gain * detail::top_eigenvalue(s.l.transpose() * s.l) +
             cfg.lambda_star * cf.inv_norm_q();
        break;
    case Block::B:
        mu = data_gain * (s.c.size() ? s.c.cwiseAbs2().maxCoeff() : 0.0) +
             cfg.lambda_1 * cf.inv_norm_b();
        break;
    case Block::C:
        mu = data_gain * (s.b.size() ? s.b.cwiseAbs2().maxCoeff() : 0.0) +
             cfg.lambda_1 * cf.inv_norm_c();
        break;
    }
    return cfg.step_safety * mu;
}

inline double routing_gain(const RoutingMatrix &r) {
    return detail::top_eigenvalue(r.entries().transpose() * r.entries());
}

/// Called after every block update with the block just updated.
using BlockObserver = std::function<void(Block, const FactorState &)>;

/// One sweep L -> Q -> B -> C, each block taking a single majorized step
/// from the freshest iterate.
inline FactorState mm_step(const FactorState &state, const Observations &obs,
                           const RoutingMatrix &r, const CorrelationFactors &cf,
                           const MmConfig &cfg, long k, double rtr_norm,
                           const BlockObserver &observer = {}) {
    FactorState s = state;
    for (Block blk : {Block::L, Block::Q, Block::B, Block::C}) {
        const double mu = step_bound(blk, s, rtr_norm, cf, cfg);
        if (!(mu <= cfg.step_cap))
            throw DivergenceError(std::string("mm_step: step bound of block ") +
                                      block_name(blk) + " exceeds the cap",
                                  k);
        if (mu > 0.0) {
            const Matrix g = block_gradient(blk, s, obs, r, cf, cfg);
            Matrix &target = blk == Block::L   ? s.l
                             : blk == Block::Q ? s.q
                             : blk == Block::B ? s.b
                                               : s.c;
            target -= g / mu;
        }
        if (!s.finite())
            throw DivergenceError(std::string("mm_step: non-finite ") + block_name(blk), k);
        if (observer) observer(blk, s);
    }
    return s;
}

inline FactorState mm_step(const FactorState &state, const Observations &obs,
                           const RoutingMatrix &r, const CorrelationFactors &cf,
                           const MmConfig &cfg, long k) {
    return mm_step(state, obs, r, cf, cfg, k, routing_gain(r));
}

inline FactorState random_factor_state(Index flows, Index times, Index rho,
                                       std::uint64_t seed) {
    Rng rng(mix_seed(seed, 11));
    const double sd = 1.0 / std::sqrt(static_cast<double>(rho));
    FactorState s;
    s.l = gaussian_matrix(flows, rho, sd, rng);
    s.q = gaussian_matrix(times, rho, sd, rng);
    s.b = gaussian_matrix(flows, times, sd, rng);
    s.c = gaussian_matrix(flows, times, sd, rng);
    return s;
}

struct MmReport {
    int iterations = 0;
    bool converged = false;
    int restarts = 0;
    std::vector<double> objective;
    std::array<double, 4> gradient_norms{};
};

struct MmResult {
    Matrix x;
    Matrix a;
    FactorState state;
    MmReport report;
};

/// Iterates mm_step from `init` until the relative objective change drops
/// below cfg.tol or cfg.max_iters sweeps are done.
inline MmResult mm_solve_from(FactorState init, const Observations &obs,
                              const RoutingMatrix &r, const CorrelationFactors &cf,
                              const MmConfig &cfg) {
    cfg.validate();
    obs.require_compatible(r);
    detail::require_state_shape(init, obs);
    if (cf.flows() != obs.flows() || cf.times() != obs.times())
        throw DimensionError("mm_solve: correlation set does not match F x T");
    const double rtr = routing_gain(r);

    MmReport rep;
    FactorState x = std::move(init);
    double obj = p5_objective(x, obs, r, cf, cfg);
    rep.objective.push_back(obj);
    FactorState x_prev = x;
    double t_prev = 1.0;
    for (int k = 0; k < cfg.max_iters; ++k) {
        FactorState next;
        double next_obj;
        if (cfg.accelerate && k > 0) {
            const double t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_prev * t_prev));
            const double beta = (t_prev - 1.0) / t;
            FactorState y{x.l + beta * (x.l - x_prev.l), x.q + beta * (x.q - x_prev.q),
                          x.b + beta * (x.b - x_prev.b), x.c + beta * (x.c - x_prev.c)};
            next = mm_step(y, obs, r, cf, cfg, k, rtr);
            next_obj = p5_objective(next, obs, r, cf, cfg);
            t_prev = t;
            if (next_obj > obj) {
                ++rep.restarts;
                t_prev = 1.0;
                next = mm_step(x, obs, r, cf, cfg, k, rtr);
                next_obj = p5_objective(next, obs, r, cf, cfg);
            }
        } else {
            next = mm_step(x, obs, r, cf, cfg, k, rtr);
            next_obj = p5_objective(next, obs, r, cf, cfg);
        }
        x_prev = std::move(x);
        x = std::move(next);
        const double change = std::abs(obj - next_obj) / std::max(std::abs(obj), 1e-300);
        obj = next_obj;
        rep.objective.push_back(obj);
        rep.iterations = k + 1;
        if (change < cfg.tol) {
            rep.converged = true;
            break;
        }
    }
    int i = 0;
    for (Block blk : {Block::L, Block::Q, Block::B, Block::C})
        rep.gradient_norms[i++] = block_gradient(blk, x, obs, r, cf, cfg).norm();
    MmResult out{x.nominal(), x.anomalies(), std::move(x), std::move(rep)};
    return out;
}

inline MmResult mm_solve(const Observations &obs, const RoutingMatrix &r,
                         const CorrelationSet &cs, const MmConfig &cfg,
                         std::uint64_t init_seed) {
    cfg.validate();
    const CorrelationFactors cf(cs, cfg.pd_floor);
    return mm_solve_from(random_factor_state(obs.flows(), obs.times(), cfg.rho, init_seed),
                         obs, r, cf, cfg);
}

} // namespace nettomo
