#include <nettomo/diagnostics.hpp>

#include <battery.hpp>

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cstring>

using namespace nettomo;

namespace {

Matrix unit(Index n, Index i) {
    Matrix e = Matrix::Zero(n, 1);
    e(i) = 1.0;
    return e;
}

/// Dense matrix of a projector acting on vec(X).
Matrix operator_matrix(const Subspace &s) {
    const Index n = s.rows * s.cols;
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i) {
        Vector e = Vector::Zero(n);
        e(i) = 1.0;
        m.col(i) = detail::vec(s.project(detail::unvec(e, s.rows, s.cols)));
    }
    return m;
}

double dense_mu(const Subspace &a, const Subspace &b) {
    return Eigen::JacobiSVD<Matrix>(operator_matrix(a) * operator_matrix(b)).singularValues()(0);
}

void expect_orthonormal(const SubspaceBasis &b) {
    if (b.dim() == 0) return;
    const Matrix g = b.vectors.transpose() * b.vectors;
    EXPECT_LT((g - Matrix::Identity(b.dim(), b.dim())).cwiseAbs().maxCoeff(), 1e-10);
}

SubspaceBundle random_bundle(Index f, Index t, Index rank, double p, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix x = gaussian_matrix(f, rank, 1.0, rng) * gaussian_matrix(rank, t, 1.0, rng);
    return SubspaceBundle::from_truth(x, gen_sparse_anomalies(f, t, p, seed));
}

} // namespace

TEST(Nullspaces, InjectiveRoutingGivesEmptyBases) {
    const Matrix r = Matrix::Identity(3, 3);
    EXPECT_EQ(nullspace_R_basis(r, 4).dim(), 0);
    EXPECT_EQ(intersect_nullspaces(r, SamplingMask::empty(3, 4)).dim(), 0);
}

TEST(Nullspaces, FullMaskGivesEmptyIntersection) {
    const Matrix r = Matrix::Ones(1, 3);
    EXPECT_EQ(nullspace_Pi_basis(SamplingMask::full(3, 4)).dim(), 0);
    EXPECT_EQ(intersect_nullspaces(r, SamplingMask::full(3, 4)).dim(), 0);
    EXPECT_EQ(nullspace_R_basis(r, 4).dim(), 8);
}

TEST(Nullspaces, HandKernel) {
    const Matrix r = Matrix::Ones(1, 2);
    const SubspaceBasis b = intersect_nullspaces(r, SamplingMask::empty(2, 1));
    ASSERT_EQ(b.dim(), 1);
    EXPECT_NEAR(std::abs(b.vectors(0, 0)), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(b.vectors(0, 0), -b.vectors(1, 0), 1e-12);
}

TEST(Nullspaces, IntersectionElementsSatisfyBothConstraints) {
    Rng rng(3);
    Matrix r = (gaussian_matrix(3, 7, 1.0, rng).array() > 0.0).cast<double>();
    const SamplingMask mask = gen_mask(7, 5, 0.3, 4);
    const SubspaceBasis b = intersect_nullspaces(r, mask);
    expect_orthonormal(b);
    expect_orthonormal(nullspace_R_basis(r, 5));
    expect_orthonormal(nullspace_Pi_basis(mask));
    for (Index i = 0; i < b.dim(); ++i) {
        const Matrix x = b.element(i);
        EXPECT_LT((r * x).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT(project_sampling(mask, x).cwiseAbs().maxCoeff(), 1e-15);
    }
    // Dimension count: per column, |unobserved| - rank of R on those columns.
    Index expect = 0;
    for (Index t = 0; t < 5; ++t) {
        std::vector<Index> free;
        for (Index f = 0; f < 7; ++f)
            if (!mask(f, t)) free.push_back(f);
        Matrix sub(3, Index(free.size()));
        for (std::size_t c = 0; c < free.size(); ++c) sub.col(c) = r.col(free[c]);
        expect += Index(free.size()) - (free.empty() ? 0 : Eigen::FullPivLU<Matrix>(sub).rank());
    }
    EXPECT_EQ(b.dim(), expect);
}

TEST(Nullspaces, SizeGuard) {
    EXPECT_THROW(nullspace_Pi_basis(SamplingMask::empty(200, 200)), SizeGuardError);
}

TEST(PhiBasis, OrthonormalAndSpansPhi) {
    const SubspaceBundle b = random_bundle(6, 5, 2, 0.1, 5);
    const SubspaceBasis basis = phi_basis(b);
    EXPECT_EQ(basis.dim(), 2 * (6 + 5 - 2));
    expect_orthonormal(basis);
    Rng rng(6);
    const Matrix m = gaussian_matrix(6, 5, 1.0, rng);
    EXPECT_LT((basis.project(m) - project_phi(b, m)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Mu, OrthogonalAndIdentical) {
    BoolArray s1 = BoolArray::Constant(3, 3, false), s2 = s1;
    s1(0, 0) = s1(1, 2) = true;
    s2(2, 2) = true;
    EXPECT_NEAR(mu(support_subspace(s1), support_subspace(s2)), 0.0, 1e-12);
    EXPECT_NEAR(mu(support_subspace(s1), support_subspace(s1)), 1.0, 1e-8);
    EXPECT_EQ(mu(support_subspace(BoolArray::Constant(3, 3, false)), support_subspace(s1)), 0.0);
}

TEST(Mu, SpikySingularVectorsAttainOne) {
    const SubspaceBundle b(unit(4, 0), unit(5, 0), BoolArray::Constant(4, 5, false));
    BoolArray s = BoolArray::Constant(4, 5, false);
    s(0, 0) = true;
    EXPECT_NEAR(mu(support_subspace(s), phi_subspace(b)), 1.0, 1e-8);
}

TEST(Mu, MatchesDenseOperatorSvd) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const SubspaceBundle b = random_bundle(8, 7, 2, 0.15, 10 + seed);
        Rng rng(20 + seed);
        const Matrix r = (gaussian_matrix(4, 8, 1.0, rng).array() > 0.3).cast<double>();
        const SamplingMask mask = gen_mask(8, 7, 0.4, 30 + seed);
        const std::vector<Subspace> subs{phi_subspace(b), support_subspace(b.support()),
                                         support_subspace(!mask.array()),
                                         nullspace_R_subspace(r, 7)};
        for (std::size_t i = 0; i < subs.size(); ++i)
            for (std::size_t j = 0; j < subs.size(); ++j) {
                if (i == j) continue;
                const double m = mu(subs[i], subs[j]);
                EXPECT_GE(m, 0.0);
                EXPECT_LE(m, 1.0 + 1e-9);
                EXPECT_NEAR(m, dense_mu(subs[i], subs[j]), 1e-6) << i << "," << j;
                EXPECT_NEAR(m, mu(subs[j], subs[i]), 1e-6);
            }
    }
}

TEST(Gammas, Examples) {
    const BoolArray none = BoolArray::Constant(4, 5, false);
    const GammaReport g1 = gammas(SubspaceBundle(unit(4, 0), unit(5, 0), none));
    EXPECT_NEAR(g1.gamma_u, 1.0, 1e-15);
    EXPECT_NEAR(g1.gamma_uv, 1.0, 1e-15);
    EXPECT_NEAR(g1.eta, 2.0, 1e-15);
    const GammaReport g2 =
        gammas(SubspaceBundle(Matrix::Constant(4, 1, 0.5), unit(5, 2), none));
    EXPECT_NEAR(g2.gamma_u, 0.5, 1e-15);
    EXPECT_NEAR(g2.gamma_uv, 0.5, 1e-15);
}

TEST(Tau, TrivialIntersection) {
    const TauResult t = tau(Matrix::Identity(3, 3), SamplingMask::empty(3, 3), TauMode::Exact);
    EXPECT_EQ(t.value, 0.0);
    EXPECT_EQ(t.dim, 0);
}

TEST(Tau, OneDimensionalIsExact) {
    // Kernel spanned by (1,-1)/sqrt 2 in one column: unit spectral norm,
    // largest entry 1/sqrt 2.
    const TauResult t = tau(Matrix::Ones(1, 2), SamplingMask::empty(2, 1), TauMode::Exact);
    EXPECT_EQ(t.dim, 1);
    EXPECT_TRUE(t.exact);
    EXPECT_NEAR(t.value, 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Tau, ExactDominatesLowerBound) {
    Matrix r = Matrix::Ones(1, 3);
    BoolArray m = BoolArray::Constant(3, 2, true);
    m(0, 0) = m(1, 0) = m(2, 0) = false;
    const SamplingMask mask(m);
    const SubspaceBasis b = intersect_nullspaces(r, mask);
    ASSERT_EQ(b.dim(), 2);
    const TauResult exact = tau(b, TauMode::Exact);
    const TauResult lower = tau(b, TauMode::LowerBound, 9, 50);
    EXPECT_TRUE(exact.exact);
    EXPECT_FALSE(lower.exact);
    EXPECT_GE(exact.value, lower.value - 1e-12);
    // Brute force over the coefficient circle.
    double best = 0.0;
    for (int i = 0; i < 200000; ++i) {
        const double a = 3.141592653589793 * i / 200000.0;
        Vector c(2);
        c << std::cos(a), std::sin(a);
        best = std::max(best, detail::tau_ratio(b, c));
    }
    EXPECT_NEAR(exact.value, best, 1e-8);
}

TEST(RecoveryConditions, AllZeroInputs) {
    const IncoherenceReport r = theorem1_check(Theorem1Inputs{});
    EXPECT_EQ(r.f, 1.0);
    EXPECT_EQ(r.g, 0.0);
    EXPECT_EQ(r.h, 0.0);
    EXPECT_EQ(r.q, 0.0);
    EXPECT_EQ(r.e, 1.0);
    EXPECT_EQ(r.lambda_max, 1.0);
    EXPECT_EQ(r.lambda_min, 0.0);
    EXPECT_TRUE(r.feasible);
}

TEST(RecoveryConditions, AlphaNearOneIsInfeasible) {
    for (double v : {0.0, 0.1, 0.3})
        for (double k : {1.0, 2.0, 5.0}) {
            Theorem1Inputs in;
            in.alpha = 0.99;
            in.xi = in.nu = in.beta = v;
            in.k = k;
            const IncoherenceReport r = theorem1_check(in);
            EXPECT_FALSE(r.feasible);
            if (r.f > 0.0) EXPECT_LE(r.lambda_max, 0.0);
        }
}

TEST(RecoveryConditions, ChiAboveOneIsInfeasible) {
    Theorem1Inputs in;
    in.mu_npi_phi = 1.0;
    in.intersection_dim = 2;
    const IncoherenceReport r = theorem1_check(in);
    EXPECT_GE(r.chi, 1.0);
    EXPECT_FALSE(r.feasible);
    in.intersection_dim = 0;
    EXPECT_TRUE(theorem1_check(in).feasible);
}

TEST(RecoveryConditions, PureFunction) {
    Theorem1Inputs in{0.1, 0.2, 0.05, 0.07, 0.6, 0.3, 0.2, 2.0, 0.01, 0.02, 0.03, 3};
    const IncoherenceReport a = theorem1_check(in), b = theorem1_check(in);
    EXPECT_EQ(std::memcmp(&a.lambda_max, &b.lambda_max, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&a.lambda_min, &b.lambda_min, sizeof(double)), 0);
    EXPECT_EQ(a.chi, b.chi);
}

TEST(RecoveryConditions, HandEvaluation) {
    Theorem1Inputs in;
    in.alpha = 0.1;
    in.beta = 0.2;
    in.xi = 0.05;
    in.nu = 0.07;
    in.eta = 0.6;
    in.tau = 0.3;
    in.gamma = 0.2;
    in.k = 2.0;
    const IncoherenceReport r = theorem1_check(in);
    const double a = 0.1, om = 0.99;
    const double f = 1 - 0.07 * 0.2 - (0.05 + a * 0.07) * om * (0.05 + a * 0.2);
    const double g = 0.05 + a * (0.05 + a * 0.07) * om * a;
    const double h = 0.07 + a * om * (0.05 + a * 0.07);
    const double q = 0.3 + 0.6 * a + 0.6 * 0.05;
    const double e = a * om * (0.05 + a * 0.2) + 1 + 0.07;
    EXPECT_NEAR(r.f, f, 1e-15);
    EXPECT_NEAR(r.lambda_max, (1 - a - a * a * a * om - g * e / f) / (2 * (1 + a * a * om + h * e / f)),
                1e-15);
    EXPECT_NEAR(r.lambda_min, (0.2 + q * g / f) / (1 - 0.6 * a * 2 - 2 * q * h / f), 1e-15);
}

TEST(IncoherenceReport, ValuesInRange) {
    const SubspaceBundle b = random_bundle(7, 6, 1, 0.1, 41);
    Rng rng(42);
    const Matrix r = (gaussian_matrix(4, 7, 1.0, rng).array() > 0.0).cast<double>();
    const IncoherenceReport rep = incoherence_report(r, gen_mask(7, 6, 0.5, 43), b);
    for (double v : {rep.alpha, rep.beta, rep.xi, rep.nu}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-9);
    }
    EXPECT_GE(rep.tau, 0.0);
    EXPECT_LE(rep.tau, 1.0 + 1e-9);
    EXPECT_EQ(rep.feasible, rep.chi < 1.0 && rep.f > 0.0 && rep.lambda_max > rep.lambda_min &&
                                rep.lambda_min >= 0.0);
}

TEST(Nonidentifiability, TwoFlowsOneLink) {
    const Matrix r = Matrix::Ones(1, 2);
    Matrix x0(2, 3);
    x0 << 1, 2, 3, 2, 4, 6;
    const Matrix x1 = demonstrate_nonidentifiability(r, x0);
    EXPECT_GT((x1 - x0).norm(), 1e-3);
    EXPECT_LT((r * (x1 - x0)).norm(), 1e-9);
    EXPECT_LE(Eigen::FullPivLU<Matrix>(x1).rank(), 1);
}

TEST(Nonidentifiability, RandomInstancesSatisfyBothClaims) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(50 + s);
        const Matrix r = (gaussian_matrix(3, 6, 1.0, rng).array() > 0.0).cast<double>();
        const Matrix x0 = gaussian_matrix(6, 2, 1.0, rng) * gaussian_matrix(2, 5, 1.0, rng);
        const Matrix x1 = demonstrate_nonidentifiability(r, x0);
        EXPECT_LT((r * (x1 - x0)).norm(), 1e-9 * (1 + (r * x0).norm()));
        EXPECT_LE(Eigen::FullPivLU<Matrix>(x1).setThreshold(1e-9).rank(), 2);
        EXPECT_GT((x1 - x0).norm(), 1e-6);
    }
}

TEST(Nonidentifiability, InjectiveRoutingIsIdentifiable) {
    EXPECT_THROW(demonstrate_nonidentifiability(Matrix::Identity(3, 3), Matrix::Ones(3, 2)),
                 IdentifiabilityError);
}

TEST(Certificate, NoAnomaliesFullMaskIdentityRouting) {
    Rng rng(60);
    const Matrix x0 = gaussian_matrix(5, 1, 1.0, rng) * gaussian_matrix(1, 4, 1.0, rng);
    const SubspaceBundle b = SubspaceBundle::from_truth(x0, Matrix::Zero(5, 4));
    const Matrix uv = b.u0() * b.v0().transpose();
    const double g = gammas(b).gamma_uv;
    const Matrix r = Matrix::Identity(5, 5);
    const auto above =
        dual_certificate(r, SamplingMask::full(5, 4), b, Matrix::Zero(5, 4), 1.01 * g);
    EXPECT_LT((above.gamma - uv).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(above.all_pass());
    const auto below =
        dual_certificate(r, SamplingMask::full(5, 4), b, Matrix::Zero(5, 4), 0.99 * g);
    EXPECT_FALSE(below.c5);
}

TEST(Certificate, OverlappingSubspacesRejected) {
    // A0 sits on the support of the spiky singular pair, so Omega is inside Phi.
    Matrix x0 = Matrix::Zero(4, 4), a0 = Matrix::Zero(4, 4);
    x0(0, 0) = 1.0;
    a0(0, 0) = 1.0;
    const SubspaceBundle b = SubspaceBundle::from_truth(x0, a0);
    EXPECT_THROW(dual_certificate(Matrix::Identity(4, 4), SamplingMask::full(4, 4), b,
                                  sign_pattern(a0), 0.5),
                 IdentifiabilityError);
}

TEST(Certificate, ConsistentWithRecovery) {
    const oracle::BatteryOutcome out = oracle::certificate_battery(11, 12, {0.35, 0.5, 0.8});
    EXPECT_GT(out.certified, 0);
    EXPECT_EQ(out.certified, out.certified_recovered);
    for (const auto &v : out.violations) ADD_FAILURE() << v;
}

TEST(Certificate, TieAtLambdaIsNotCertified) {
    // flows 1 and 7 share a routing column; the anomaly on flow 7 is unobserved
    const oracle::TinyInstance in = oracle::tiny_instance(9, 31);
    ASSERT_EQ(in.r.col(1), in.r.col(7));
    const SubspaceBundle b = SubspaceBundle::from_truth(in.x0, in.a0);
    const CertificateResult c = dual_certificate(in.r, in.mask, b, sign_pattern(in.a0), 0.5);
    EXPECT_NEAR(c.c5_value, 0.5, 1e-12);
    EXPECT_FALSE(c.c5);
}
