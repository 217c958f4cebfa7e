#include <nettomo/correlation.hpp>
#include <nettomo/synthgen.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace nettomo;

namespace {

Vector eigenvalues(const Matrix &m) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(m).eigenvalues();
}

Matrix random_spd(Index n, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix g = gaussian_matrix(n, n, 1.0, rng);
    return g * g.transpose() + Matrix::Identity(n, n);
}

// Day d of a cyclostationary process: fixed mean profile plus iid noise.
struct NoisyProfile {
    Matrix mean;
    double sigma;

    Matrix history(Index days, Rng &rng) const {
        Matrix h(mean.rows(), mean.cols() * days);
        for (Index d = 0; d < days; ++d)
            h.middleCols(d * mean.cols(), mean.cols()) =
                mean + gaussian_matrix(mean.rows(), mean.cols(), sigma, rng);
        return h;
    }

    Matrix true_rq(Index rho) const {
        const double f = double(mean.rows()), t = double(mean.cols());
        const Matrix extx = mean.transpose() * mean + f * sigma * sigma * Matrix::Identity(mean.cols(), mean.cols());
        const double e = mean.squaredNorm() + f * t * sigma * sigma;
        return double(rho) * extx / std::sqrt(e);
    }
};

} // namespace

TEST(ConditionPd, AlreadyPdUnchanged) {
    const Matrix m = random_spd(5, 1);
    EXPECT_LT((condition_pd(m) - m).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ConditionPd, OnesMatrixClipped) {
    const Vector ev = eigenvalues(condition_pd(Matrix::Ones(2, 2)));
    EXPECT_NEAR(ev(0), 2e-6, 1e-15);
    EXPECT_NEAR(ev(1), 2.0, 1e-12);
}

TEST(ConditionPd, FloorHoldsOnRandomIndefinite) {
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        Matrix m = gaussian_matrix(6, 6, 1.0, rng);
        m = (0.5 * (m + m.transpose())).eval();
        const Matrix c = condition_pd(m, 1e-4);
        EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        const Vector ev = eigenvalues(c);
        EXPECT_GE(ev(0), 1e-4 * ev(ev.size() - 1) * (1 - 1e-9));
    }
}

TEST(ConditionPd, RejectsNonSymmetric) {
    Matrix m = Matrix::Identity(2, 2);
    m(0, 1) = 1.0;
    EXPECT_THROW(condition_pd(m), InvalidArgument);
}

TEST(Toeplitz, Structure) {
    Vector row(3);
    row << 3, 2, 1;
    Matrix expect(3, 3);
    expect << 3, 2, 1, 2, 3, 2, 1, 2, 3;
    EXPECT_EQ(toeplitz(row), expect);
}

TEST(EqualizeTraces, MakesTracesEqual) {
    Matrix l = 4.0 * Matrix::Identity(3, 3), q = Matrix::Identity(5, 5);
    equalize_traces(l, q);
    EXPECT_NEAR(l.trace(), q.trace(), 1e-12);
    EXPECT_NEAR(l.trace() * q.trace(), 12.0 * 5.0, 1e-9);
}

TEST(CorrFromMoments, StandardGaussianGivesIdentity) {
    const Index n = 6;
    const auto [rl, rq] = corr_from_moments(double(n) * Matrix::Identity(n, n),
                                            double(n) * Matrix::Identity(n, n), double(n * n), 1);
    EXPECT_LT((rl - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((rq - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CorrFromMoments, MonteCarloMomentsOfBilinearModel) {
    // X = l q' with standard Gaussian factors: E[XX'] = T I, E[X'X] = F I.
    const Index n = 4;
    Rng rng(3);
    Matrix exxt = Matrix::Zero(n, n), extx = Matrix::Zero(n, n);
    double e2 = 0.0;
    const int draws = 40000;
    for (int k = 0; k < draws; ++k) {
        const Matrix x = gaussian_matrix(n, 1, 1.0, rng) * gaussian_matrix(n, 1, 1.0, rng).transpose();
        exxt += x * x.transpose();
        extx += x.transpose() * x;
        e2 += x.squaredNorm();
    }
    exxt /= draws;
    extx /= draws;
    e2 /= draws;
    exxt = (0.5 * (exxt + exxt.transpose())).eval();
    extx = (0.5 * (extx + extx.transpose())).eval();
    const auto [rl, rq] = corr_from_moments(exxt, extx, e2, 1);
    EXPECT_LT((rl - Matrix::Identity(n, n)).norm() / 2.0, 0.1);
    EXPECT_LT((rq - Matrix::Identity(n, n)).norm() / 2.0, 0.1);
}

TEST(CorrFromMoments, Homogeneity) {
    const Matrix a = random_spd(4, 5), b = random_spd(3, 6);
    const auto [rl1, rq1] = corr_from_moments(a, b, 7.0, 2);
    const auto [rl4, rq4] = corr_from_moments(4 * a, b, 28.0, 2);
    EXPECT_LT((rl4 - 2 * rl1).cwiseAbs().maxCoeff(), 1e-12);
    const auto [rl, rq] = corr_from_moments(a, b * (a.trace() / b.trace()), 7.0, 2);
    EXPECT_NEAR(rl.trace(), rq.trace(), 1e-10);
}

TEST(CorrFromMoments, Errors) {
    Matrix ns = Matrix::Identity(2, 2);
    ns(1, 0) = 0.5;
    EXPECT_THROW(corr_from_moments(ns, Matrix::Identity(2, 2), 1.0, 1), InvalidArgument);
    EXPECT_THROW(corr_from_moments(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.0, 1),
                 InvalidArgument);
}

TEST(LearnRqRl, NeedsTwoDays) {
    TrainingData d{Matrix::Ones(3, 4), Matrix(), 4, 1};
    EXPECT_THROW(learn_RQ_RL(d, 1), InvalidArgument);
    d = TrainingData{Matrix::Ones(3, 7), Matrix(), 4, 2};
    EXPECT_THROW(learn_RQ_RL(d, 1), DimensionError);
}

TEST(LearnRqRl, RepeatedDayGivesGramOfThatDay) {
    Rng rng(7);
    const Matrix x = gaussian_matrix(6, 4, 1.0, rng);
    const Index k = 5;
    TrainingData d{x.replicate(1, k), Matrix(), 4, k};
    const auto [rl, rq] = learn_RQ_RL(d, 2);
    const Matrix gram = x.transpose() * x;
    EXPECT_LT((rq / rq.norm() - gram / gram.norm()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(rl.trace(), rq.trace(), 1e-10);
}

TEST(LearnRqRl, ConsistentInDays) {
    const Index f = 10, t = 12;
    Rng gen(11);
    const NoisyProfile p{gaussian_matrix(f, 3, 1.0, gen) * gaussian_matrix(3, t, 1.0, gen), 0.7};
    const Matrix truth = p.true_rq(1);
    const std::vector<Index> ks{2, 8, 32, 200};
    std::vector<double> mean_err(ks.size(), 0.0);
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s)
        for (std::size_t i = 0; i < ks.size(); ++i) {
            Rng rng(mix_seed(100 + s, ks[i]));
            TrainingData d{p.history(ks[i], rng), Matrix(), t, ks[i]};
            const Matrix rq = learn_RQ_RL(d, 1).second;
            mean_err[i] += (rq - truth).norm() / truth.norm() / seeds;
        }
    for (std::size_t i = 1; i < ks.size(); ++i) EXPECT_LE(mean_err[i], mean_err[i - 1]);
    EXPECT_LT(mean_err.back(), 0.2);
}

TEST(LearnRqRl, IndependentFlowsNearlyUncorrelated) {
    const Index t = 24, k = 50;
    const double sigma = 1.0;
    Rng rng(12);
    const Matrix h = gaussian_matrix(2, t * k, sigma, rng);
    TrainingData d{h, Matrix(), t, k};
    const Matrix rl = learn_RQ_RL(d, 1).first;
    const double energy = h.squaredNorm() / double(k);
    // Off-diagonal is scale * sum_t m1(t) m2(t) with day-means of variance sigma^2/K.
    const double se = std::sqrt(double(t)) * sigma * sigma / double(k) / std::sqrt(energy);
    EXPECT_LT(std::abs(rl(0, 1)), 3.0 * se);
}

TEST(BurstCorrelations, ReferenceParametersLagZero) {
    BurstParams bp;
    bp.gamma_f = 1.0;
    bp.nu = 1.0;
    const Vector ra = burst_autocorrelation(bp, 3);
    EXPECT_NEAR(ra(0), 2.5e-5 / 0.001999, 1e-12);
    EXPECT_NEAR(ra(0), 1.2506e-2, 1e-6);
    EXPECT_NEAR(ra(1) / ra(0), 0.999, 1e-12);
}

TEST(BurstCorrelations, ZeroRateGivesZero) {
    BurstParams bp;
    bp.nu = 0.0;
    bp.anomalous_flows = {0, 2};
    for (const Vector &v : burst_correlations(bp, 3, 10)) EXPECT_TRUE(v.isZero());
}

TEST(BurstCorrelations, OnlyAnomalousFlowsNonzero) {
    BurstParams bp;
    bp.anomalous_flows = {1};
    const auto seqs = burst_correlations(bp, 3, 5);
    EXPECT_TRUE(seqs[0].isZero());
    EXPECT_GT(seqs[1](0), 0.0);
    EXPECT_TRUE(seqs[2].isZero());
    bp.anomalous_flows = {3};
    EXPECT_THROW(burst_correlations(bp, 3, 5), InvalidArgument);
}

TEST(BurstCorrelations, RejectsUnstableTheta) {
    BurstParams bp;
    bp.theta = 1.0;
    EXPECT_THROW(burst_autocorrelation(bp, 4), InvalidArgument);
    bp.theta = -1.2;
    EXPECT_THROW(burst_autocorrelation(bp, 4), InvalidArgument);
}

TEST(BurstCorrelations, MemorylessSwitchMatchesBernoulliSimulation) {
    const double nu = 0.3;
    BurstParams bp;
    bp.gamma_f = 1.0;
    bp.alpha = 0.0;
    bp.nu = nu;
    bp.theta = 0.0;
    bp.sigma_n = 1.0;
    // With theta = 0 and sigma_n = 1, R_c = delta so R_a(0) = R_b(0).
    const Vector ra = burst_autocorrelation(bp, 4);
    EXPECT_NEAR(ra(0), nu * (1 - nu) + nu * nu, 1e-15);

    // Simulate b_t = d_t b_{t-1} + (1 - d_t) e_t with P(d_t = 1) = alpha = 0.
    Rng rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 400000;
    std::vector<double> b(n);
    double prev = u(rng) < nu;
    for (int t = 0; t < n; ++t) {
        const bool keep = u(rng) < 0.0;
        prev = keep ? prev : double(u(rng) < nu);
        b[t] = prev;
    }
    for (int tau = 0; tau < 4; ++tau) {
        double s = 0.0;
        for (int t = tau; t < n; ++t) s += b[t] * b[t - tau];
        s /= double(n - tau);
        const double rb = tau == 0 ? nu : nu * nu;
        EXPECT_NEAR(s, rb, 0.01) << "lag " << tau;
    }
}

TEST(SplitRbRc, DiagonalCase) {
    Vector ra = Vector::Zero(5);
    ra(0) = 4.0;
    const AnomalyBlocks b = split_RB_RC({ra});
    EXPECT_LT((toeplitz(b.rb_rows[0]) - 2.0 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((toeplitz(b.rc_rows[0]) - 2.0 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SplitRbRc, EntrywiseProductRestoresRa) {
    Rng rng(4);
    std::vector<Vector> ra;
    for (int f = 0; f < 5; ++f) {
        Vector v = gaussian_matrix(8, 1, 1.0, rng);
        v(0) = std::abs(v(0)) + 2.0;
        ra.push_back(v);
    }
    const AnomalyBlocks b = split_RB_RC(ra);
    for (std::size_t f = 0; f < ra.size(); ++f) {
        EXPECT_LT((b.rb_rows[f].cwiseProduct(b.rc_rows[f]) - ra[f]).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_TRUE((b.rb_rows[f].array() >= 0.0).all());
    }
}

TEST(SplitRbRc, GeometricSequenceGivesPdBlocks) {
    const Index t = 30;
    Vector ra(t);
    for (Index k = 0; k < t; ++k) ra(k) = std::pow(0.9, double(k));
    const AnomalyBlocks b = split_RB_RC({ra});
    for (Index k = 0; k < t; ++k) EXPECT_NEAR(b.rb_rows[0](k), std::pow(0.9, k / 2.0), 1e-12);
    EXPECT_GT(eigenvalues(toeplitz(b.rb_rows[0]))(0), 0.0);
    EXPECT_GT(eigenvalues(toeplitz(b.rc_rows[0]))(0), 0.0);
}

TEST(SplitRbRc, ZeroRowsBecomeScaledIdentity) {
    Vector a = Vector::Zero(4), z = Vector::Zero(4);
    a(0) = 9.0;
    const AnomalyBlocks b = split_RB_RC({a, z});
    EXPECT_EQ(b.rb_rows[1](0), 3.0);
    EXPECT_TRUE(b.rb_rows[1].tail(3).isZero());
    EXPECT_EQ(b.rc_rows[1](0), 3.0);
}

TEST(LearnRa, ConstantAndZeroRows) {
    Matrix a = Matrix::Zero(2, 12);
    a.row(0).setOnes();
    TrainingData d{Matrix::Zero(2, 12), a, 4, 3};
    const auto ra = learn_Ra_from_history(d);
    EXPECT_LT((ra[0] - Vector::Ones(4)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(ra[1].isZero());
}

TEST(LearnRa, MatchesAnalyticBurstSequence) {
    BurstParams bp;
    bp.gamma_f = 10.0;
    bp.theta = 0.95;
    bp.sigma_n = 0.1;
    bp.alpha = 0.9;
    bp.nu = 0.4;
    const Index flows = 40, period = 25, days = 2000;
    for (int f = 0; f < flows; ++f) bp.anomalous_flows.push_back(f);
    const Matrix a = gen_bursty_anomalies(flows, period * days, bp, 77);
    TrainingData d{Matrix::Zero(flows, period * days), a, period, days};
    const auto est = learn_Ra_from_history(d);
    Vector pooled = Vector::Zero(period);
    for (const Vector &v : est) pooled += v / double(flows);
    const Vector truth = burst_autocorrelation(bp, period);
    for (Index tau = 0; tau <= 20; ++tau)
        EXPECT_NEAR(pooled(tau), truth(tau), 0.1 * truth(tau)) << "lag " << tau;
}
