#pragma once

// Identifiability and exact-recovery diagnostics on small instances:
// subspace bases, incoherence measures, the lambda-range check and
// numerical dual certificates.

#include <nettomo/core.hpp>
#include <nettomo/synthgen.hpp>

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace nettomo {

/// Largest F*T accepted by the dense diagnostics.
inline constexpr Index kDiagMaxEntries = 20000;
/// Largest number of doubles held by one explicit basis.
inline constexpr Index kDiagMaxBasisDoubles = 40'000'000;

namespace detail {

inline void guard_size(Index flows, Index times, const char *who) {
    if (flows * times > kDiagMaxEntries)
        throw SizeGuardError(std::string(who) + ": F*T = " + std::to_string(flows * times) +
                             " exceeds the diagnostics limit of " +
                             std::to_string(kDiagMaxEntries));
}

inline void guard_basis(Index ambient, Index dim, const char *who) {
    if (ambient * dim > kDiagMaxBasisDoubles)
        throw SizeGuardError(std::string(who) + ": basis of dimension " + std::to_string(dim) +
                             " is too large to store densely");
}

inline Vector vec(const Matrix &m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unvec(const Vector &v, Index rows, Index cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// Orthonormal basis of ker(m) (columns), from the SVD.
inline Matrix kernel_basis(const Matrix &m, Index n, double rel_tol = 1e-10) {
    if (m.rows() == 0 || m.size() == 0) return Matrix::Identity(n, n);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
    const Vector &s = svd.singularValues();
    const double cut = rel_tol * std::max(1.0, s.size() ? s(0) : 0.0);
    const Index rank = (s.array() > cut).count();
    return svd.matrixV().rightCols(n - rank);
}

} // namespace detail

/// Orthonormal basis of a subspace of F x T matrices; column i is vec of the
/// i-th basis matrix (column-major stacking).
struct SubspaceBasis {
    Index rows = 0;
    Index cols = 0;
    Matrix vectors;

    Index dim() const noexcept { return vectors.cols(); }
    Matrix element(Index i) const { return detail::unvec(vectors.col(i), rows, cols); }
    Matrix project(const Matrix &m) const {
        if (dim() == 0) return Matrix::Zero(rows, cols);
        const Vector v = detail::vec(m);
        return detail::unvec(vectors * (vectors.transpose() * v), rows, cols);
    }
};

/// A subspace given by its orthogonal projector.
struct Subspace {
    Index rows = 0;
    Index cols = 0;
    Index dim = 0;
    std::function<Matrix(const Matrix &)> project;
};

inline Subspace as_subspace(SubspaceBasis b) {
    const Index r = b.rows, c = b.cols, d = b.dim();
    auto shared = std::make_shared<SubspaceBasis>(std::move(b));
    return {r, c, d, [shared](const Matrix &m) { return shared->project(m); }};
}

/// Coordinate subspace of matrices supported on `support`.
inline Subspace support_subspace(const BoolArray &support) {
    return {support.rows(), support.cols(), static_cast<Index>(support.count()),
            [support](const Matrix &m) { return project_sampling(support, m); }};
}

inline Subspace phi_subspace(const SubspaceBundle &b) {
    const Index r = b.rank(), f = b.flows(), t = b.times();
    return {f, t, r * (f + t - r), [b](const Matrix &m) { return project_phi(b, m); }};
}

/// {X : R X = 0}, acting column by column.
inline Subspace nullspace_R_subspace(const Matrix &r, Index times) {
    const Matrix n = detail::kernel_basis(r, r.cols());
    const Matrix p = n * n.transpose();
    return {r.cols(), times, n.cols() * times, [p](const Matrix &m) -> Matrix { return p * m; }};
}

inline SubspaceBasis nullspace_R_basis(const Matrix &r, Index times) {
    detail::guard_size(r.cols(), times, "nullspace_R_basis");
    const Matrix n = detail::kernel_basis(r, r.cols());
    const Index f = r.cols();
    detail::guard_basis(f * times, n.cols() * times, "nullspace_R_basis");
    SubspaceBasis b{f, times, Matrix::Zero(f * times, n.cols() * times)};
    for (Index t = 0; t < times; ++t)
        b.vectors.block(t * f, t * n.cols(), f, n.cols()) = n;
    return b;
}

inline SubspaceBasis nullspace_Pi_basis(const SamplingMask &mask) {
    detail::guard_size(mask.rows(), mask.cols(), "nullspace_Pi_basis");
    const Index f = mask.rows(), t = mask.cols();
    const Index d = f * t - mask.observed_count();
    detail::guard_basis(f * t, d, "nullspace_Pi_basis");
    SubspaceBasis b{f, t, Matrix::Zero(f * t, d)};
    Index k = 0;
    for (Index j = 0; j < t; ++j)
        for (Index i = 0; i < f; ++i)
            if (!mask(i, j)) b.vectors(j * f + i, k++) = 1.0;
    return b;
}

/// N_R intersect N_Pi: per column, the kernel of R restricted to the
/// unobserved flows of that column.
inline SubspaceBasis intersect_nullspaces(const Matrix &r, const SamplingMask &mask) {
    detail::guard_size(mask.rows(), mask.cols(), "intersect_nullspaces");
    if (r.cols() != mask.rows()) throw DimensionError("intersect_nullspaces: R and mask disagree on F");
    const Index f = mask.rows(), t = mask.cols();
    std::vector<std::pair<Index, Matrix>> pieces;
    Index total = 0;
    for (Index j = 0; j < t; ++j) {
        std::vector<Index> free;
        for (Index i = 0; i < f; ++i)
            if (!mask(i, j)) free.push_back(i);
        if (free.empty()) continue;
        Matrix sub(r.rows(), static_cast<Index>(free.size()));
        for (std::size_t c = 0; c < free.size(); ++c) sub.col(c) = r.col(free[c]);
        const Matrix ker = detail::kernel_basis(sub, sub.cols());
        if (ker.cols() == 0) continue;
        Matrix full = Matrix::Zero(f, ker.cols());
        for (std::size_t c = 0; c < free.size(); ++c) full.row(free[c]) = ker.row(c);
        total += ker.cols();
        pieces.emplace_back(j, std::move(full));
    }
    detail::guard_basis(f * t, total, "intersect_nullspaces");
    SubspaceBasis b{f, t, Matrix::Zero(f * t, total)};
    Index k = 0;
    for (const auto &[j, block] : pieces) {
        b.vectors.block(j * f, k, f, block.cols()) = block;
        k += block.cols();
    }
    return b;
}

inline SubspaceBasis support_basis(const BoolArray &support) {
    const Index f = support.rows(), t = support.cols();
    detail::guard_size(f, t, "support_basis");
    SubspaceBasis b{f, t, Matrix::Zero(f * t, support.count())};
    Index k = 0;
    for (Index j = 0; j < t; ++j)
        for (Index i = 0; i < f; ++i)
            if (support(i, j)) b.vectors(j * f + i, k++) = 1.0;
    return b;
}

/// Basis {u_i e_j'} together with {w_k v_i'}, w_k spanning the orthogonal
/// complement of U0.
inline SubspaceBasis phi_basis(const SubspaceBundle &bundle) {
    const Index f = bundle.flows(), t = bundle.times(), r = bundle.rank();
    detail::guard_size(f, t, "phi_basis");
    const Index d = r * (f + t - r);
    detail::guard_basis(f * t, d, "phi_basis");
    SubspaceBasis b{f, t, Matrix::Zero(f * t, d)};
    Index k = 0;
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < t; ++j) b.vectors.block(j * f, k++, f, 1) = bundle.u0().col(i);
    Matrix complement;
    if (r < f) {
        Eigen::HouseholderQR<Matrix> qr(bundle.u0());
        const Matrix q = qr.householderQ() * Matrix::Identity(f, f);
        complement = q.rightCols(f - r);
    }
    for (Index c = 0; c < f - r; ++c)
        for (Index i = 0; i < r; ++i)
            b.vectors.col(k++) = detail::vec(complement.col(c) * bundle.v0().col(i).transpose());
    return b;
}

struct MuOptions {
    double tol = 1e-8;
    int max_iters = 20000;
    std::uint64_t seed = 7;
};

/// Largest singular value of P_A P_B, i.e. the max of ||P_A X||_F over unit
/// X in B, by power iteration on P_B P_A P_B.
inline double mu(const Subspace &a, const Subspace &b, const MuOptions &opt = {}) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw DimensionError("mu: subspaces live in different ambient spaces");
    if (a.dim == 0 || b.dim == 0) return 0.0;
    Rng rng(mix_seed(opt.seed, 21));
    Matrix x = b.project(gaussian_matrix(a.rows, a.cols, 1.0, rng));
    double nx = x.norm();
    if (nx == 0.0) return 0.0;
    x /= nx;
    double lambda = 0.0;
    for (int it = 0; it < opt.max_iters; ++it) {
        const Matrix y = b.project(a.project(x));
        const double next = inner(x, y);
        const double resid = (y - next * x).norm();
        const double ny = y.norm();
        lambda = next;
        if (ny == 0.0) return 0.0;
        x = y / ny;
        if (resid < opt.tol * std::max(1e-3, next)) break;
    }
    return std::sqrt(std::clamp(lambda, 0.0, 1.0));
}

struct GammaReport {
    double gamma_u = 0.0;
    double gamma_v = 0.0;
    double gamma_uv = 0.0;
    double eta = 0.0;
};

inline GammaReport gammas(const SubspaceBundle &b) {
    GammaReport g;
    if (b.rank() == 0) return g;
    g.gamma_u = b.u0().rowwise().norm().maxCoeff();
    g.gamma_v = b.v0().rowwise().norm().maxCoeff();
    g.gamma_uv = max_abs(b.u0() * b.v0().transpose());
    g.eta = g.gamma_u + g.gamma_v;
    return g;
}

enum class TauMode { Exact, LowerBound };

struct TauResult {
    double value = 0.0;
    bool exact = true;
    Index dim = 0;
};

namespace detail {

inline double tau_ratio(const SubspaceBasis &basis, const Vector &coef) {
    const Matrix x = unvec(basis.vectors * coef, basis.rows, basis.cols);
    const double s = spectral_norm(x);
    return s > 0.0 ? max_abs(x) / s : 0.0;
}

/// Coordinate pattern search on the coefficient sphere.
inline double refine_tau(const SubspaceBasis &basis, Vector coef, double best) {
    double step = 0.05;
    while (step > 1e-10) {
        bool improved = false;
        for (Index i = 0; i < coef.size(); ++i)
            for (double dir : {1.0, -1.0}) {
                Vector trial = coef;
                trial(i) += dir * step;
                trial.normalize();
                const double v = tau_ratio(basis, trial);
                if (v > best) {
                    best = v;
                    coef = trial;
                    improved = true;
                }
            }
        if (!improved) step *= 0.5;
    }
    return best;
}

} // namespace detail

/// max ||X||_inf over unit-spectral-norm X in the given basis span.
inline TauResult tau(const SubspaceBasis &intersection, TauMode mode, std::uint64_t seed = 5,
                     int probes = 2000) {
    TauResult res;
    res.dim = intersection.dim();
    if (res.dim == 0) return res;
    const Index d = res.dim;
    if (d == 1) {
        res.value = detail::tau_ratio(intersection, Vector::Ones(1));
        return res;
    }
    std::vector<Vector> starts;
    if (mode == TauMode::Exact && d <= 3) {
        const double pi = std::acos(-1.0);
        if (d == 2) {
            for (int i = 0; i < 3600; ++i) {
                const double a = pi * i / 3600.0;
                Vector c(2);
                c << std::cos(a), std::sin(a);
                starts.push_back(c);
            }
        } else {
            const int n = 20000;
            const double golden = pi * (3.0 - std::sqrt(5.0));
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - (i + 0.5) / n; // upper hemisphere
                const double rad = std::sqrt(1.0 - z * z);
                Vector c(3);
                c << rad * std::cos(golden * i), rad * std::sin(golden * i), z;
                starts.push_back(c);
            }
        }
    } else {
        res.exact = false;
        Rng rng(mix_seed(seed, 31));
        std::normal_distribution<double> nd;
        for (int i = 0; i < probes; ++i) {
            Vector c(d);
            for (Index j = 0; j < d; ++j) c(j) = nd(rng);
            starts.push_back(c.normalized());
        }
    }
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < starts.size(); ++i)
        scored.emplace_back(detail::tau_ratio(intersection, starts[i]), i);
    std::sort(scored.begin(), scored.end(), std::greater<>());
    double best = scored.front().first;
    const std::size_t polish = std::min<std::size_t>(scored.size(), 5);
    for (std::size_t i = 0; i < polish; ++i)
        best = std::max(best, detail::refine_tau(intersection, starts[scored[i].second],
                                                 scored[i].first));
    res.value = best;
    return res;
}

inline TauResult tau(const Matrix &r, const SamplingMask &mask, TauMode mode,
                     std::uint64_t seed = 5) {
    const SubspaceBasis b = intersect_nullspaces(r, mask);
    const TauMode effective = b.dim() <= 3 ? mode : TauMode::LowerBound;
    return tau(b, effective, seed);
}

struct Theorem1Inputs {
    double alpha = 0.0;
    double beta = 0.0;
    double xi = 0.0;
    double nu = 0.0;
    double eta = 0.0;
    double tau = 0.0;
    double gamma = 0.0;
    double k = 1.0;
    /// Pairwise incoherences entering chi.
    double mu_npi_phi = 0.0;
    double mu_nr_omega = 0.0;
    double mu_npi_omega = 0.0;
    Index intersection_dim = 0;
};

struct IncoherenceReport {
    double alpha = 0.0, beta = 0.0, xi = 0.0, nu = 0.0, eta = 0.0, tau = 0.0, gamma = 0.0;
    double k_max_col = 0.0;
    double chi = 0.0;
    double f = 0.0, g = 0.0, h = 0.0, q = 0.0, e = 0.0;
    double lambda_min = 0.0, lambda_max = 0.0;
    bool feasible = false;
    bool tau_exact = true;
    Index intersection_dim = 0;
    std::string reason;
};

/// Evaluates the closed-form lambda range and the feasibility verdict.
inline IncoherenceReport theorem1_check(const Theorem1Inputs &in) {
    IncoherenceReport r;
    r.alpha = in.alpha;
    r.beta = in.beta;
    r.xi = in.xi;
    r.nu = in.nu;
    r.eta = in.eta;
    r.tau = in.tau;
    r.gamma = in.gamma;
    r.k_max_col = in.k;
    r.intersection_dim = in.intersection_dim;
    const double a = in.alpha, b = in.beta, xi = in.xi, nu = in.nu, k = in.k;
    const double om = 1.0 - a * a;
    const double inf = std::numeric_limits<double>::infinity();

    if (in.intersection_dim == 0) r.chi = 0.0;
    else if (a >= 1.0) r.chi = inf;
    else r.chi = std::sqrt((in.mu_npi_phi + in.mu_nr_omega * in.mu_npi_omega) / (1.0 - a));

    r.f = 1.0 - nu * b - (xi + a * nu) * om * (xi + a * b);
    r.g = xi + a * (xi + a * nu) * om * a;
    r.h = nu + a * om * (xi + a * nu);
    r.q = in.tau + in.eta * a + in.eta * xi;
    r.e = a * om * (xi + a * b) + 1.0 + nu;

    if (!(r.f > 0.0)) {
        r.lambda_max = -inf;
        r.lambda_min = inf;
        r.feasible = false;
        r.reason = "f <= 0";
        return r;
    }
    if (!(k > 0.0)) {
        r.lambda_max = inf;
    } else {
        const double num = 1.0 - a - a * a * a * om - r.g * r.e / r.f;
        const double den = 1.0 + a * a * om + r.h * r.e / r.f;
        r.lambda_max = num / (k * den);
    }
    const double den_min = 1.0 - in.eta * a * k - k * r.q * r.h / r.f;
    r.lambda_min = den_min > 0.0 ? (in.gamma + r.q * r.g / r.f) / den_min : inf;

    if (!(r.chi < 1.0)) r.reason = "chi >= 1";
    else if (!(r.lambda_min >= 0.0)) r.reason = "lambda_min < 0";
    else if (!(r.lambda_max > r.lambda_min)) r.reason = "lambda_max <= lambda_min";
    r.feasible = r.reason.empty();
    return r;
}

/// Max nonzeros per column of a support pattern.
inline double max_column_count(const BoolArray &support) {
    Index best = 0;
    for (Index j = 0; j < support.cols(); ++j)
        best = std::max<Index>(best, support.col(j).count());
    return static_cast<double>(best);
}

/// Computes every incoherence quantity for a given instance and runs the
/// lambda-range check.
inline IncoherenceReport incoherence_report(const Matrix &r, const SamplingMask &mask,
                                            const SubspaceBundle &bundle,
                                            TauMode mode = TauMode::Exact,
                                            const MuOptions &opt = {}) {
    detail::guard_size(bundle.flows(), bundle.times(), "incoherence_report");
    const Subspace phi = phi_subspace(bundle);
    const Subspace omega = support_subspace(bundle.support());
    const Subspace n_pi = support_subspace(!mask.array());
    const Subspace n_r = nullspace_R_subspace(r, bundle.times());
    const Subspace omega_npi = support_subspace(bundle.support() && !mask.array());
    const TauResult t = tau(r, mask, mode);
    const GammaReport g = gammas(bundle);

    Theorem1Inputs in;
    in.alpha = mu(omega, phi, opt);
    in.beta = mu(omega, n_r, opt);
    in.xi = mu(n_pi, phi, opt);
    in.nu = mu(n_r, omega_npi, opt);
    in.eta = g.eta;
    in.tau = t.value;
    in.gamma = g.gamma_uv;
    in.k = max_column_count(bundle.support());
    in.mu_npi_phi = in.xi;
    in.mu_nr_omega = in.beta;
    in.mu_npi_omega = mu(n_pi, omega, opt);
    in.intersection_dim = t.dim;
    IncoherenceReport rep = theorem1_check(in);
    rep.tau_exact = t.exact;
    return rep;
}

/// X1 = X0 + W V0' with the columns of W in ker(R): same link counts,
/// rank no larger than X0's.
inline Matrix demonstrate_nonidentifiability(const Matrix &r, const Matrix &x0,
                                             double scale = 1.0) {
    if (r.cols() != x0.rows()) throw DimensionError("demonstrate_nonidentifiability: R and X0 disagree on F");
    const Matrix ker = detail::kernel_basis(r, r.cols());
    if (ker.cols() == 0)
        throw IdentifiabilityError("demonstrate_nonidentifiability: R is injective, X0 is identifiable");
    const SubspaceBundle b = SubspaceBundle::from_truth(x0, Matrix::Zero(x0.rows(), x0.cols()));
    if (b.rank() == 0) throw DegenerateTruthError("demonstrate_nonidentifiability: X0 is zero");
    const double s = scale * std::max(1.0, spectral_norm(x0));
    const Matrix w = ker.col(0) * Vector::Constant(b.rank(), s).transpose();
    return x0 + w * b.v0().transpose();
}

struct CertificateResult {
    Matrix gamma;
    bool c1 = false, c2 = false, c3 = false, c4 = false, c5 = false;
    double c4_value = 0.0;
    double c5_value = 0.0;
    double residual = 0.0;
    double theta = 0.0;
    bool condition_a = false;
    bool condition_b = false;
    bool all_pass() const { return c1 && c2 && c3 && c4 && c5; }
};

/// Solves for the unique Gamma in Omega + Phi + (N_R ^ N_Pi) with the
/// prescribed projections and checks the two norm conditions.
inline CertificateResult dual_certificate(const Matrix &r, const SamplingMask &mask,
                                          const SubspaceBundle &bundle, const Matrix &sign_a0,
                                          double lambda,
                                          const IncoherenceReport *incoherence = nullptr) {
    const Index f = bundle.flows(), t = bundle.times();
    detail::guard_size(f, t, "dual_certificate");
    if (mask.rows() != f || mask.cols() != t || r.cols() != f)
        throw DimensionError("dual_certificate: inconsistent dimensions");
    detail::require_same_shape(sign_a0, f, t, "dual_certificate sign pattern");
    const SubspaceBasis b_omega = support_basis(bundle.support());
    const SubspaceBasis b_phi = phi_basis(bundle);
    const SubspaceBasis b_null = intersect_nullspaces(r, mask);
    const Index d1 = b_omega.dim(), d2 = b_phi.dim(), d3 = b_null.dim();
    detail::guard_basis(f * t, d1 + d2 + d3, "dual_certificate");

    Matrix basis(f * t, d1 + d2 + d3);
    basis << b_omega.vectors, b_phi.vectors, b_null.vectors;
    if (d1 + d2 + d3 > f * t)
        throw IdentifiabilityError("dual_certificate: subspace dimensions exceed F*T, no direct sum");
    Eigen::JacobiSVD<Matrix> svd(basis);
    const double smin = svd.singularValues().size() ? svd.singularValues().minCoeff() : 1.0;
    if (smin < 1e-8)
        throw IdentifiabilityError("dual_certificate: Omega, Phi and N_R^N_Pi do not form a direct sum");

    const Matrix target_omega = lambda * sign_a0;
    const Matrix uv = bundle.u0() * bundle.v0().transpose();
    Vector rhs(d1 + d2 + d3);
    rhs << b_omega.vectors.transpose() * detail::vec(target_omega),
        b_phi.vectors.transpose() * detail::vec(uv), Vector::Zero(d3);
    const Matrix gram = basis.transpose() * basis;
    const Vector coef = gram.ldlt().solve(rhs);

    CertificateResult res;
    res.gamma = detail::unvec(basis * coef, f, t);
    const double r1 = (b_phi.project(res.gamma) - uv).norm();
    const double r2 = (b_omega.project(res.gamma) - target_omega).norm();
    const double r3 = b_null.project(res.gamma).norm();
    res.residual = std::max({r1, r2, r3});
    res.c1 = r1 < 1e-8;
    res.c2 = r2 < 1e-8;
    res.c3 = r3 < 1e-8;
    res.c4_value = spectral_norm(res.gamma - project_phi(bundle, res.gamma));
    constexpr double margin = 1e-9;
    res.c4 = res.c4_value < 1.0 - margin;
    res.c5_value = max_abs(project_sampling(!bundle.support(), res.gamma));
    res.c5 = res.c5_value < lambda * (1.0 - margin);

    const IncoherenceReport inc =
        incoherence ? *incoherence : incoherence_report(r, mask, bundle);
    const double a = inc.alpha, be = inc.beta, xi = inc.xi, nu = inc.nu, k = inc.k_max_col;
    const double om = 1.0 - a * a;
    res.theta = inc.f > 0.0
                    ? (xi + lambda * k * nu + a * (xi + a * nu) * om * (a + lambda * k)) / inc.f
                    : std::numeric_limits<double>::infinity();
    res.condition_a = lambda * k + a + a * om * (a * (a + lambda * k) + (a * be + xi) * res.theta) +
                          (1.0 + nu) * res.theta <
                      1.0;
    res.condition_b =
        inc.gamma + inc.eta * a * lambda * k + (inc.tau + inc.eta * a + inc.eta * xi) * res.theta <
        lambda;
    return res;
}

inline Matrix sign_pattern(const Matrix &a0) {
    return a0.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

} // namespace nettomo
