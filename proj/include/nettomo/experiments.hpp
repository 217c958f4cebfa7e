#pragma once

// Experiment pipelines: scenario generation, lambda tuning, phase-grid and
// NetFlow sweeps, and the correlation-aware burst comparison.

#include <nettomo/admm.hpp>
#include <nettomo/core.hpp>
#include <nettomo/correlation.hpp>
#include <nettomo/io.hpp>
#include <nettomo/mm.hpp>
#include <nettomo/parallel.hpp>
#include <nettomo/synthgen.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#ifndef NETTOMO_VERSION
#define NETTOMO_VERSION "0.0.0"
#endif

namespace nettomo {

inline constexpr const char *kVersion = NETTOMO_VERSION;

struct ScenarioParams {
    int nodes = 15;
    double d_c = 0.35;
    Index flows = 70;
    Index times = 70;
    int paths = 3;
    Index rank = 2;
    double anomaly_p = 0.01;
    double pi = 0.25;
    double noise_y = 0.0;
    double noise_z = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (nodes < 2) throw ConfigError("scenario.nodes must be >= 2");
        if (d_c < 0.0) throw ConfigError("scenario.d_c must be >= 0");
        if (flows < 1 || times < 1) throw ConfigError("scenario.flows and scenario.times must be >= 1");
        if (flows > static_cast<Index>(nodes) * (nodes - 1))
            throw ConfigError("scenario.flows exceeds the number of ordered node pairs");
        if (paths < 1) throw ConfigError("scenario.paths must be >= 1");
        if (rank < 0 || rank > std::min(flows, times))
            throw ConfigError("scenario.rank must lie in [0, min(F,T)]");
        if (anomaly_p < 0.0 || anomaly_p > 1.0) throw ConfigError("scenario.anomaly_p must lie in [0,1]");
        if (pi < 0.0 || pi > 1.0) throw ConfigError("scenario.pi must lie in [0,1]");
        if (noise_y < 0.0 || noise_z < 0.0) throw ConfigError("scenario noise levels must be >= 0");
    }
};

struct Scenario {
    ScenarioParams params;
    Topology topology;
    RoutingMatrix routing;
    Matrix x0;
    Matrix a0;
    SamplingMask mask;
    Observations obs;
    /// Graph seed actually used after connectivity retries.
    std::uint64_t graph_seed = 0;
};

inline constexpr int kMaxRegenerations = 1000;

/// Regenerates the graph until connected and the anomaly matrix until it
/// is nonzero (when p > 0).
inline Scenario generate_scenario(const ScenarioParams &p) {
    p.validate();
    Scenario s;
    s.params = p;
    int attempt = 0;
    for (;; ++attempt) {
        if (attempt == kMaxRegenerations)
            throw ConfigError("generate_scenario: no connected graph found; increase scenario.d_c");
        s.graph_seed = mix_seed(p.seed, 100 + static_cast<std::uint64_t>(attempt));
        s.topology = gen_geometric_graph({p.nodes, p.d_c, s.graph_seed});
        if (s.topology.connected()) break;
    }
    const auto od = random_od_pairs(p.nodes, p.flows, mix_seed(p.seed, 11));
    s.routing = build_routing(s.topology, od, p.paths, mix_seed(p.seed, 12));
    s.x0 = gen_lowrank_traffic(p.flows, p.times, p.rank, mix_seed(p.seed, 13));
    for (attempt = 0;; ++attempt) {
        s.a0 = gen_sparse_anomalies(p.flows, p.times, p.anomaly_p,
                                    mix_seed(p.seed, 14 + 1000 * static_cast<std::uint64_t>(attempt)));
        if (p.anomaly_p == 0.0 || s.a0.cwiseAbs().maxCoeff() > 0.0) break;
        if (attempt == kMaxRegenerations)
            throw ConfigError("generate_scenario: anomaly matrix stays zero; raise scenario.anomaly_p");
    }
    s.mask = gen_mask(p.flows, p.times, p.pi, mix_seed(p.seed, 15));
    s.obs = observe(s.routing, s.x0, s.a0, s.mask, p.noise_y, p.noise_z, mix_seed(p.seed, 16));
    return s;
}

/// Same scenario with a fresh mask of probability pi.
inline Scenario with_sampling(const Scenario &base, double pi, std::uint64_t mask_seed) {
    Scenario s = base;
    s.params.pi = pi;
    s.mask = gen_mask(base.params.flows, base.params.times, pi, mask_seed);
    s.obs = observe(s.routing, s.x0, s.a0, s.mask, s.params.noise_y, s.params.noise_z,
                    mix_seed(base.params.seed, 16));
    return s;
}

/// n log-spaced points in [1e-3, 10] / sqrt(max(F,T)).
inline std::vector<double> lambda_grid(Index flows, Index times, int n = 8) {
    if (n < 1) throw InvalidArgument("lambda_grid: need at least one point");
    const double base = 1.0 / std::sqrt(static_cast<double>(std::max(flows, times)));
    std::vector<double> out;
    for (int i = 0; i < n; ++i) {
        const double e = n == 1 ? -1.0 : -3.0 + 4.0 * i / (n - 1);
        out.push_back(base * std::pow(10.0, e));
    }
    return out;
}

enum class SolverKind { P1, P2, P5, P6 };

inline SolverKind parse_solver(const std::string &s) {
    if (s == "p1") return SolverKind::P1;
    if (s == "p2") return SolverKind::P2;
    if (s == "p5") return SolverKind::P5;
    if (s == "p6") return SolverKind::P6;
    throw ConfigError("unknown solver '" + s + "' (expected p1, p2, p5 or p6)");
}

inline const char *solver_name(SolverKind k) {
    switch (k) {
    case SolverKind::P1: return "p1";
    case SolverKind::P2: return "p2";
    case SolverKind::P5: return "p5";
    case SolverKind::P6: return "p6";
    }
    return "?";
}

struct SolveOutcome {
    Matrix x;
    Matrix a;
    Matrix o_y;
    Matrix o_z;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    double seconds = 0.0;
};

inline SolveOutcome run_solver(SolverKind kind, const Observations &obs, const RoutingMatrix &r,
                               const AdmmConfig &admm, const MmConfig &mm,
                               const CorrelationSet *corr = nullptr,
                               std::uint64_t init_seed = 1) {
    const auto start = std::chrono::steady_clock::now();
    SolveOutcome out;
    switch (kind) {
    case SolverKind::P1:
    case SolverKind::P2: {
        auto res = kind == SolverKind::P1 ? admm_solve_p1(obs, r, admm) : admm_solve_p2(obs, r, admm);
        out.x = std::move(res.x);
        out.a = std::move(res.a);
        out.iterations = res.report.iterations;
        out.converged = res.report.converged;
        out.objective = res.report.objective.empty() ? 0.0 : res.report.objective.back();
        break;
    }
    case SolverKind::P6: {
        auto res = admm_solve_p6(obs, r, admm);
        out.x = std::move(res.x);
        out.a = std::move(res.a);
        out.o_y = std::move(res.o_y);
        out.o_z = std::move(res.o_z);
        out.iterations = res.report.iterations;
        out.converged = res.report.converged;
        out.objective = res.report.objective.empty() ? 0.0 : res.report.objective.back();
        break;
    }
    case SolverKind::P5: {
        const CorrelationSet cs = corr ? *corr : identity_correlations(obs.flows(), obs.times());
        auto res = mm_solve(obs, r, cs, mm, init_seed);
        out.x = std::move(res.x);
        out.a = std::move(res.a);
        out.iterations = res.report.iterations;
        out.converged = res.report.converged;
        out.objective = res.report.objective.back();
        break;
    }
    }
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

struct TunedRun {
    double lambda = 0.0;
    ErrorMetrics metrics{};
    int iterations = 0;
    bool converged = false;
};

/// Runs the constrained solver for every lambda and keeps the smallest
/// e_{x+a}. Divergent runs are skipped; throws if every run diverges.
inline TunedRun tune_p2(const Observations &obs, const RoutingMatrix &r, const Matrix &x0,
                        const Matrix &a0, const std::vector<double> &lambdas,
                        AdmmConfig cfg) {
    if (lambdas.empty()) throw ConfigError("lambda grid must not be empty");
    TunedRun best;
    best.metrics.e_xa = std::numeric_limits<double>::infinity();
    bool any = false;
    for (double lam : lambdas) {
        cfg.lambda = lam;
        try {
            const auto res = admm_solve_p2(obs, r, cfg);
            const auto m = relative_errors({res.x, res.a}, {x0, a0});
            if (!any || m.e_xa < best.metrics.e_xa) {
                best = {lam, m, res.report.iterations, res.report.converged};
                any = true;
            }
        } catch (const DivergenceError &) {
        }
    }
    if (!any) throw DivergenceError("tune_p2: every lambda diverged", 0);
    return best;
}

// ---------------------------------------------------------------------------
// Phase grid

struct PhaseGridConfig {
    ScenarioParams base;
    std::vector<Index> ranks{1, 2, 3, 4};
    std::vector<Index> sparsities{10, 20, 40, 80};
    std::vector<double> lambdas;
    int seeds = 1;
    int threads = 1;
    AdmmConfig admm;
};

struct PhaseGridResult {
    /// ranks x sparsities, mean over seeds of min-over-lambda e_{x+a};
    /// NaN where every seed failed.
    Matrix errors;
    Matrix mean_iterations;
    std::vector<std::string> failures;

    Index white_cells(double threshold = 0.01) const {
        return (errors.array() <= threshold).count();
    }
};

inline PhaseGridResult run_phase_grid(const PhaseGridConfig &cfg) {
    if (cfg.ranks.empty() || cfg.sparsities.empty()) throw ConfigError("grid.ranks and grid.sparsities must be non-empty");
    if (cfg.seeds < 1) throw ConfigError("grid.seeds must be >= 1");
    for (Index r : cfg.ranks)
        if (r < 1) throw ConfigError("grid.ranks entries must be >= 1 (zero truth has no relative error)");
    const double cells = static_cast<double>(cfg.base.flows * cfg.base.times);
    for (Index s : cfg.sparsities)
        if (s < 1 || static_cast<double>(s) > cells)
            throw ConfigError("grid.sparsities entries must lie in [1, F*T]");
    cfg.base.validate();
    const auto lambdas =
        cfg.lambdas.empty() ? lambda_grid(cfg.base.flows, cfg.base.times) : cfg.lambdas;

    const Index nr = static_cast<Index>(cfg.ranks.size());
    const Index ns = static_cast<Index>(cfg.sparsities.size());
    struct Cell {
        double error_sum = 0.0;
        double iter_sum = 0.0;
        int ok = 0;
        std::vector<std::string> failures;
    };
    std::vector<Cell> cells_out(static_cast<std::size_t>(nr * ns));
    parallel_for(nr * ns, cfg.threads, [&](Index idx) {
        const Index i = idx / ns, j = idx % ns;
        Cell &cell = cells_out[static_cast<std::size_t>(idx)];
        for (int rep = 0; rep < cfg.seeds; ++rep) {
            ScenarioParams p = cfg.base;
            p.rank = cfg.ranks[i];
            p.anomaly_p = static_cast<double>(cfg.sparsities[j]) / cells;
            p.seed = mix_seed(cfg.base.seed, static_cast<std::uint64_t>(rep));
            try {
                const Scenario sc = generate_scenario(p);
                const TunedRun t = tune_p2(sc.obs, sc.routing, sc.x0, sc.a0, lambdas, cfg.admm);
                cell.error_sum += t.metrics.e_xa;
                cell.iter_sum += t.iterations;
                ++cell.ok;
            } catch (const Error &e) {
                cell.failures.push_back("r=" + std::to_string(p.rank) +
                                        " s=" + std::to_string(cfg.sparsities[j]) +
                                        " seed#" + std::to_string(rep) + ": " + e.what());
            }
        }
    });

    PhaseGridResult res;
    res.errors = Matrix::Constant(nr, ns, std::numeric_limits<double>::quiet_NaN());
    res.mean_iterations = Matrix::Zero(nr, ns);
    for (Index i = 0; i < nr; ++i)
        for (Index j = 0; j < ns; ++j) {
            const Cell &c = cells_out[static_cast<std::size_t>(i * ns + j)];
            if (c.ok) {
                res.errors(i, j) = c.error_sum / c.ok;
                res.mean_iterations(i, j) = c.iter_sum / c.ok;
            }
            res.failures.insert(res.failures.end(), c.failures.begin(), c.failures.end());
        }
    return res;
}

// ---------------------------------------------------------------------------
// NetFlow sweep

struct NetflowSweepConfig {
    ScenarioParams base;
    std::vector<double> pis{0.0, 0.1, 0.25, 0.5};
    std::vector<double> lambdas;
    int seeds = 5;
    int threads = 1;
    AdmmConfig admm;
};

struct NetflowPoint {
    double pi = 0.0;
    double e_x = 0.0;
    double e_a = 0.0;
    double e_xa = 0.0;
    int runs = 0;
};

/// Per pi (sorted ascending): fresh mask on each seed's scenario, tuned
/// constrained solve, errors averaged over seeds.
inline std::vector<NetflowPoint> run_netflow_sweep(const NetflowSweepConfig &cfg) {
    if (cfg.pis.empty()) throw ConfigError("sweep.pis must be non-empty");
    if (cfg.seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
    for (double pi : cfg.pis)
        if (pi < 0.0 || pi > 1.0) throw ConfigError("sweep.pis entries must lie in [0,1]");
    std::vector<double> pis = cfg.pis;
    std::sort(pis.begin(), pis.end());
    const auto lambdas =
        cfg.lambdas.empty() ? lambda_grid(cfg.base.flows, cfg.base.times) : cfg.lambdas;

    std::vector<Scenario> scenarios;
    for (int rep = 0; rep < cfg.seeds; ++rep) {
        ScenarioParams p = cfg.base;
        p.seed = mix_seed(cfg.base.seed, static_cast<std::uint64_t>(rep));
        scenarios.push_back(generate_scenario(p));
    }
    const Index np = static_cast<Index>(pis.size());
    std::vector<TunedRun> runs(static_cast<std::size_t>(np * cfg.seeds));
    std::vector<char> ok(runs.size(), 0);
    parallel_for(np * cfg.seeds, cfg.threads, [&](Index idx) {
        const Index k = idx / cfg.seeds;
        const int rep = static_cast<int>(idx % cfg.seeds);
        const Scenario s = with_sampling(scenarios[rep], pis[k],
                                         mix_seed(scenarios[rep].params.seed, 500 + static_cast<std::uint64_t>(k)));
        try {
            runs[idx] = tune_p2(s.obs, s.routing, s.x0, s.a0, lambdas, cfg.admm);
            ok[idx] = 1;
        } catch (const DivergenceError &) {
        }
    });
    std::vector<NetflowPoint> out;
    for (Index k = 0; k < np; ++k) {
        NetflowPoint pt;
        pt.pi = pis[k];
        for (int rep = 0; rep < cfg.seeds; ++rep) {
            const std::size_t idx = static_cast<std::size_t>(k * cfg.seeds + rep);
            if (!ok[idx]) continue;
            pt.e_x += runs[idx].metrics.e_x;
            pt.e_a += runs[idx].metrics.e_a;
            ++pt.runs;
        }
        if (pt.runs) {
            pt.e_x /= pt.runs;
            pt.e_a /= pt.runs;
        } else {
            pt.e_x = pt.e_a = std::numeric_limits<double>::quiet_NaN();
        }
        pt.e_xa = pt.e_x + pt.e_a;
        out.push_back(pt);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Burst comparison

/// Daily traffic profile: X_day = (L + dL)(Q + dQ)' with fixed L, Q and
/// fresh Gaussian perturbations each day. L has a positive base level per
/// flow, Q a constant term plus diurnal harmonics.
struct DailyProfile {
    Matrix l;
    Matrix q;
    double jitter = 0.1;

    static DailyProfile make(Index flows, Index period, Index rank, double scale,
                             double jitter, std::uint64_t seed) {
        constexpr double kTwoPi = 6.283185307179586;
        Rng rng(mix_seed(seed, 50));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        DailyProfile p;
        p.jitter = jitter;
        p.l.resize(flows, rank);
        p.q.resize(period, rank);
        for (Index f = 0; f < flows; ++f)
            for (Index j = 0; j < rank; ++j)
                p.l(f, j) = scale * (j == 0 ? 1.0 + 2.0 * u(rng) : u(rng) - 0.5);
        for (Index j = 0; j < rank; ++j) {
            const double phase = kTwoPi * u(rng);
            for (Index t = 0; t < period; ++t)
                p.q(t, j) = (j == 0 ? 2.0 : 0.0) +
                            std::sin(kTwoPi * double(j + 1) * double(t) / double(period) + phase);
        }
        return p;
    }

    Matrix sample_day(Rng &rng) const {
        const double sl = jitter * (l.size() ? l.cwiseAbs().mean() : 0.0);
        const Matrix ld = l + gaussian_matrix(l.rows(), l.cols(), sl, rng);
        const Matrix qd = q + gaussian_matrix(q.rows(), q.cols(), jitter, rng);
        return ld * qd.transpose();
    }
};

struct BurstCompareConfig {
    int nodes = 8;
    double d_c = 0.5;
    Index flows = 56;
    Index period = 96;
    Index train_days = 7;
    /// Held-out days whose mean e_xa selects the lambdas of both methods.
    Index validation_days = 3;
    int paths = 1;
    Index rank = 3;
    double traffic_scale = 0.3;
    double jitter = 0.1;
    double anomalous_fraction = 0.5;
    BurstParams burst{50.0, 0.999, 0.005, 0.95, 0.1, {}};
    Index burn_in = 2000;
    double row_miss = 0.1;
    double time_pi = 0.1;
    std::vector<double> p1_lambda_star{0.3, 1.0, 3.0, 10.0};
    std::vector<double> p1_lambda_1{0.03, 0.1, 0.3, 1.0};
    std::vector<double> p5_lambda_star{1.0, 3.0, 10.0};
    std::vector<double> p5_lambda_1{0.3, 1.0, 3.0};
    AdmmConfig admm{0.0, 1.0, 0.1, 1.0, 1.0, 1.0, 3000};
    MmConfig mm{5, 1.0, 1.0, 3000, 1e-7, 1.01, true, 1e15, 1e-3};
    std::uint64_t seed = 1;

    void validate() const {
        if (train_days < 2) throw ConfigError("burst.train_days must be >= 2");
        if (validation_days < 1) throw ConfigError("burst.validation_days must be >= 1");
        if (period < 2) throw ConfigError("burst.period must be >= 2");
        if (flows < 1 || flows > static_cast<Index>(nodes) * (nodes - 1))
            throw ConfigError("burst.flows must lie in [1, N(N-1)]");
        if (rank < 1 || rank > std::min(flows, period)) throw ConfigError("burst.rank out of range");
        if (anomalous_fraction < 0.0 || anomalous_fraction > 1.0)
            throw ConfigError("burst.anomalous_fraction must lie in [0,1]");
        if (p1_lambda_star.empty() || p1_lambda_1.empty() || p5_lambda_star.empty() ||
            p5_lambda_1.empty())
            throw ConfigError("burst tuning grids must be non-empty");
        burst.validate();
    }
};

struct MethodResult {
    ErrorMetrics metrics{};
    double lambda_star = 0.0;
    double lambda_1 = 0.0;
    int iterations = 0;
    Matrix x;
    Matrix a;
    /// Mean Pearson correlation between estimate and truth over fully
    /// unobserved rows.
    double dark_row_pearson = 0.0;
};

struct BurstCompareResult {
    MethodResult p1;
    MethodResult p5;
    Matrix x0;
    Matrix a0;
    SamplingMask mask;
    std::vector<Index> dark_rows;
};

inline double pearson(const Vector &a, const Vector &b) {
    const Vector da = a.array() - a.mean();
    const Vector db = b.array() - b.mean();
    const double den = da.norm() * db.norm();
    return den > 0.0 ? da.dot(db) / den : 0.0;
}

inline BurstCompareResult run_burst_compare(const BurstCompareConfig &cfg) {
    cfg.validate();
    const Index F = cfg.flows, T = cfg.period;
    Topology topo;
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxRegenerations) throw ConfigError("burst: no connected graph found; increase burst.d_c");
        topo = gen_geometric_graph({cfg.nodes, cfg.d_c, mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(attempt))});
        if (topo.connected()) break;
    }
    const auto od = random_od_pairs(cfg.nodes, F, mix_seed(cfg.seed, 11));
    const RoutingMatrix r = build_routing(topo, od, cfg.paths, mix_seed(cfg.seed, 12));

    const DailyProfile profile =
        DailyProfile::make(F, T, cfg.rank, cfg.traffic_scale, cfg.jitter, mix_seed(cfg.seed, 51));
    BurstParams bp = cfg.burst;
    bp.anomalous_flows.clear();
    {
        Rng pick(mix_seed(cfg.seed, 60));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (Index f = 0; f < F; ++f)
            if (u(pick) < cfg.anomalous_fraction) bp.anomalous_flows.push_back(static_cast<int>(f));
    }

    Rng traffic_rng(mix_seed(cfg.seed, 70));
    Matrix history(F, cfg.train_days * T);
    for (Index d = 0; d < cfg.train_days; ++d) history.middleCols(d * T, T) = profile.sample_day(traffic_rng);
    const auto [r_l, r_q] = learn_RQ_RL({history, Matrix(), T, cfg.train_days}, cfg.mm.rho);
    BurstParams every = bp;
    every.anomalous_flows.clear();
    for (Index f = 0; f < F; ++f) every.anomalous_flows.push_back(static_cast<int>(f));
    const CorrelationSet cs{r_l, r_q, split_RB_RC(burst_correlations(every, F, T))};

    const SamplingMask mask = gen_structured_mask(F, T, cfg.row_miss, cfg.time_pi, mix_seed(cfg.seed, 80));
    struct Day {
        Matrix x0, a0;
        Observations obs;
    };
    auto make_day = [&](std::uint64_t stream) {
        Day d;
        d.x0 = profile.sample_day(traffic_rng);
        for (std::uint64_t k = 0;; ++k) {
            d.a0 = gen_bursty_anomalies(F, T + cfg.burn_in, bp, mix_seed(cfg.seed, stream + 7919 * k))
                       .rightCols(T);
            if (bp.anomalous_flows.empty() || d.a0.cwiseAbs().maxCoeff() > 0.0) break;
            if (k == static_cast<std::uint64_t>(kMaxRegenerations))
                throw ConfigError("burst: anomalies stay zero; raise burst.nu or burst.anomalous_fraction");
        }
        if (d.a0.cwiseAbs().maxCoeff() == 0.0)
            throw ConfigError("burst: no anomalous flows selected");
        d.obs = observe(r, d.x0, d.a0, mask, 0.0, 0.0, mix_seed(cfg.seed, stream + 1));
        return d;
    };
    std::vector<Day> validation{make_day(90)};
    const Day test = make_day(95);
    for (Index d = 1; d < cfg.validation_days; ++d)
        validation.push_back(make_day(200 + 10 * static_cast<std::uint64_t>(d)));

    auto score = [](const Matrix &x, const Matrix &a, const Day &d) {
        return relative_errors({x, a}, {d.x0, d.a0});
    };

    BurstCompareResult out;
    out.x0 = test.x0;
    out.a0 = test.a0;
    out.mask = mask;
    for (Index f = 0; f < F; ++f)
        if (mask.array().row(f).count() == 0) out.dark_rows.push_back(f);

    auto dark_pearson = [&](const Matrix &x) {
        if (out.dark_rows.empty()) return 0.0;
        double s = 0.0;
        for (Index f : out.dark_rows)
            s += pearson(x.row(f).transpose(), test.x0.row(f).transpose());
        return s / static_cast<double>(out.dark_rows.size());
    };

    {
        double best = std::numeric_limits<double>::infinity();
        AdmmConfig c = cfg.admm;
        for (double ls : cfg.p1_lambda_star)
            for (double l1 : cfg.p1_lambda_1) {
                c.lambda_star = ls;
                c.lambda_1 = l1;
                try {
                    double e = 0.0;
                    for (const Day &v : validation) {
                        const auto res = admm_solve_p1(v.obs, r, c);
                        e += score(res.x, res.a, v).e_xa;
                    }
                    if (e < best) {
                        best = e;
                        out.p1.lambda_star = ls;
                        out.p1.lambda_1 = l1;
                    }
                } catch (const DivergenceError &) {
                }
            }
        if (!std::isfinite(best)) throw DivergenceError("burst: every P1 configuration diverged", 0);
        c.lambda_star = out.p1.lambda_star;
        c.lambda_1 = out.p1.lambda_1;
        auto res = admm_solve_p1(test.obs, r, c);
        out.p1.metrics = score(res.x, res.a, test);
        out.p1.iterations = res.report.iterations;
        out.p1.x = std::move(res.x);
        out.p1.a = std::move(res.a);
        out.p1.dark_row_pearson = dark_pearson(out.p1.x);
    }
    {
        double best = std::numeric_limits<double>::infinity();
        MmConfig c = cfg.mm;
        const std::uint64_t init = mix_seed(cfg.seed, 99);
        const CorrelationFactors cf(cs, c.pd_floor);
        const FactorState start = random_factor_state(F, T, c.rho, init);
        for (double ls : cfg.p5_lambda_star)
            for (double l1 : cfg.p5_lambda_1) {
                c.lambda_star = ls;
                c.lambda_1 = l1;
                try {
                    double e = 0.0;
                    for (const Day &v : validation) {
                        const auto res = mm_solve_from(start, v.obs, r, cf, c);
                        e += score(res.x, res.a, v).e_xa;
                    }
                    if (e < best) {
                        best = e;
                        out.p5.lambda_star = ls;
                        out.p5.lambda_1 = l1;
                    }
                } catch (const DivergenceError &) {
                }
            }
        if (!std::isfinite(best)) throw DivergenceError("burst: every P5 configuration diverged", 0);
        c.lambda_star = out.p5.lambda_star;
        c.lambda_1 = out.p5.lambda_1;
        auto res = mm_solve_from(start, test.obs, r, cf, c);
        out.p5.metrics = score(res.x, res.a, test);
        out.p5.iterations = res.report.iterations;
        out.p5.x = std::move(res.x);
        out.p5.a = std::move(res.a);
        out.p5.dark_row_pearson = dark_pearson(out.p5.x);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
    KeyValueFile config;
    std::map<std::string, double> metrics;
    std::map<std::string, long long> iterations;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;

    KeyValueFile to_file() const {
        KeyValueFile kv;
        kv.set("version", std::string(kVersion));
        kv.set("seed", std::to_string(seed));
        kv.set("wall_seconds", wall_seconds);
        for (const auto &[k, v] : metrics) kv.set("metric." + k, v);
        for (const auto &[k, v] : iterations) kv.set("iterations." + k, v);
        for (const auto &k : config.keys()) kv.set("config." + k, config.get(k));
        return kv;
    }
};

} // namespace nettomo
