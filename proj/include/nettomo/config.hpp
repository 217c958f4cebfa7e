#pragma once

// Flat key=value experiment configuration. Every accepted key is listed in
// config_keys(); unknown keys are rejected.

#include <nettomo/experiments.hpp>
#include <nettomo/io.hpp>

#include <set>
#include <string>
#include <vector>

namespace nettomo {

struct ConfigKey {
    const char *key;
    const char *fallback;
    const char *help;
};

inline const std::vector<ConfigKey> &config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"run.seed", "1", "base seed (overridden by --seed)"},
        {"run.threads", "1", "worker threads (overridden by --threads)"},
        {"run.solver", "p2", "p1 | p2 | p5 | p6 (overridden by --solver)"},

        {"scenario.nodes", "15", "routers N"},
        {"scenario.d_c", "0.35", "connection radius of the geometric graph"},
        {"scenario.flows", "70", "OD flows F"},
        {"scenario.times", "70", "time slots T"},
        {"scenario.paths", "3", "link-disjoint paths per flow K"},
        {"scenario.rank", "2", "rank of the nominal traffic"},
        {"scenario.anomaly_p", "0.01", "anomaly probability p"},
        {"scenario.pi", "0.25", "NetFlow sampling probability"},
        {"scenario.noise_y", "0", "link-count noise std"},
        {"scenario.noise_z", "0", "flow-count noise std"},

        {"admm.lambda", "0", "constrained sparsity weight, 0 = 1/sqrt(max(F,T))"},
        {"admm.lambda_star", "1", "nuclear-norm weight (penalized solvers)"},
        {"admm.lambda_1", "0.1", "l1 weight (penalized solvers)"},
        {"admm.lambda_y", "1", "link outlier weight (robust solver)"},
        {"admm.lambda_z", "1", "flow outlier weight (robust solver)"},
        {"admm.c", "1", "augmented-Lagrangian penalty"},
        {"admm.max_iters", "2000", "iteration cap"},
        {"admm.tol", "0", "primal/dual residual tolerance, 0 = 1e-6(1+||Y||)"},
        {"admm.adapt_c", "false", "residual balancing of c"},

        {"mm.rho", "5", "factor rank"},
        {"mm.lambda_star", "1", "low-rank weight"},
        {"mm.lambda_1", "1", "anomaly weight"},
        {"mm.max_iters", "5000", "iteration cap"},
        {"mm.tol", "1e-8", "relative objective-change tolerance"},
        {"mm.step_safety", "1.01", "step-size safety factor"},
        {"mm.accelerate", "true", "Nesterov extrapolation with restart"},
        {"mm.pd_floor", "1e-6", "relative eigenvalue floor for correlation blocks"},
        {"mm.r_l", "", "CSV file with R_L (solve, p5); identity when empty"},
        {"mm.r_q", "", "CSV file with R_Q (solve, p5); identity when empty"},

        {"grid.ranks", "1,2,3,4", "rank axis of the phase grid"},
        {"grid.sparsities", "10,20,40,80", "anomaly-count axis s = pFT"},
        {"grid.lambdas", "", "lambda grid; empty = 8 log-spaced points"},
        {"grid.seeds", "1", "scenarios averaged per cell"},

        {"sweep.pis", "0,0.1,0.25,0.5", "NetFlow fractions"},
        {"sweep.lambdas", "", "lambda grid; empty = 8 log-spaced points"},
        {"sweep.seeds", "5", "scenarios averaged per point"},

        {"burst.nodes", "8", "routers"},
        {"burst.d_c", "0.5", "connection radius"},
        {"burst.flows", "56", "OD flows"},
        {"burst.period", "96", "slots per day T"},
        {"burst.train_days", "7", "training days K"},
        {"burst.validation_days", "3", "held-out days for lambda selection"},
        {"burst.paths", "1", "paths per flow"},
        {"burst.rank", "3", "rank of the daily profile"},
        {"burst.traffic_scale", "0.3", "nominal traffic scale"},
        {"burst.jitter", "0.1", "day-to-day perturbation of the profile"},
        {"burst.anomalous_fraction", "0.5", "fraction of flows carrying bursts"},
        {"burst.gamma", "50", "burst amplitude"},
        {"burst.theta", "0.999", "AR(1) coefficient"},
        {"burst.sigma_n", "0.005", "AR(1) innovation std"},
        {"burst.alpha", "0.95", "burst persistence"},
        {"burst.nu", "0.1", "burst activation probability"},
        {"burst.burn_in", "2000", "discarded warm-up slots of the burst process"},
        {"burst.row_miss", "0.1", "fraction of flows never sampled"},
        {"burst.time_pi", "0.1", "sampling probability of the other flows"},
        {"burst.p1_lambda_star", "0.3,1,3,10", "P1 tuning grid"},
        {"burst.p1_lambda_1", "0.03,0.1,0.3,1", "P1 tuning grid"},
        {"burst.p5_lambda_star", "1,3,10", "P5 tuning grid"},
        {"burst.p5_lambda_1", "0.3,1,3", "P5 tuning grid"},
        {"burst.admm_max_iters", "3000", "P1 iteration cap"},
        {"burst.mm_max_iters", "3000", "P5 iteration cap"},
        {"burst.mm_tol", "1e-7", "P5 tolerance"},
        {"burst.mm_rho", "5", "P5 factor rank"},
        {"burst.pd_floor", "1e-3", "P5 eigenvalue floor"},
        {"burst.series_flow", "-1", "flow for the time-series CSV, -1 = first unobserved"},
    };
    return keys;
}

/// Loads a config file and fills in defaults for every documented key.
inline KeyValueFile resolve_config(const KeyValueFile &user) {
    std::set<std::string> allowed;
    for (const auto &k : config_keys()) allowed.insert(k.key);
    user.require_known(allowed);
    KeyValueFile out;
    for (const auto &k : config_keys()) out.set(k.key, user.get(k.key, k.fallback));
    return out;
}

namespace detail {

inline std::vector<double> list_or_empty(const KeyValueFile &c, const std::string &key) {
    if (trim(c.get(key, "")).empty()) return {};
    return c.get_list(key, {});
}

inline std::vector<Index> index_list(const KeyValueFile &c, const std::string &key) {
    std::vector<Index> out;
    for (double v : c.get_list(key, {})) {
        if (v != std::floor(v)) throw ConfigError("key '" + key + "' must hold integers");
        out.push_back(static_cast<Index>(v));
    }
    return out;
}

} // namespace detail

inline ScenarioParams scenario_from_config(const KeyValueFile &c) {
    ScenarioParams p;
    p.nodes = static_cast<int>(c.get_int("scenario.nodes"));
    p.d_c = c.get_double("scenario.d_c");
    p.flows = c.get_int("scenario.flows");
    p.times = c.get_int("scenario.times");
    p.paths = static_cast<int>(c.get_int("scenario.paths"));
    p.rank = c.get_int("scenario.rank");
    p.anomaly_p = c.get_double("scenario.anomaly_p");
    p.pi = c.get_double("scenario.pi");
    p.noise_y = c.get_double("scenario.noise_y");
    p.noise_z = c.get_double("scenario.noise_z");
    p.seed = static_cast<std::uint64_t>(c.get_int("run.seed"));
    p.validate();
    return p;
}

inline AdmmConfig admm_from_config(const KeyValueFile &c) {
    AdmmConfig a;
    a.lambda = c.get_double("admm.lambda");
    a.lambda_star = c.get_double("admm.lambda_star");
    a.lambda_1 = c.get_double("admm.lambda_1");
    a.lambda_y = c.get_double("admm.lambda_y");
    a.lambda_z = c.get_double("admm.lambda_z");
    a.c = c.get_double("admm.c");
    a.max_iters = static_cast<int>(c.get_int("admm.max_iters"));
    a.tol_primal = a.tol_dual = c.get_double("admm.tol");
    a.adapt_c = c.get_bool("admm.adapt_c", false);
    a.threads = static_cast<int>(c.get_int("run.threads"));
    try {
        a.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
    }
    return a;
}

inline MmConfig mm_from_config(const KeyValueFile &c) {
    MmConfig m;
    m.rho = c.get_int("mm.rho");
    m.lambda_star = c.get_double("mm.lambda_star");
    m.lambda_1 = c.get_double("mm.lambda_1");
    m.max_iters = static_cast<int>(c.get_int("mm.max_iters"));
    m.tol = c.get_double("mm.tol");
    m.step_safety = c.get_double("mm.step_safety");
    m.accelerate = c.get_bool("mm.accelerate", true);
    m.pd_floor = c.get_double("mm.pd_floor");
    try {
        m.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
    }
    return m;
}

inline PhaseGridConfig phase_grid_from_config(const KeyValueFile &c) {
    PhaseGridConfig g;
    g.base = scenario_from_config(c);
    g.ranks = detail::index_list(c, "grid.ranks");
    g.sparsities = detail::index_list(c, "grid.sparsities");
    g.lambdas = detail::list_or_empty(c, "grid.lambdas");
    g.seeds = static_cast<int>(c.get_int("grid.seeds"));
    g.threads = static_cast<int>(c.get_int("run.threads"));
    g.admm = admm_from_config(c);
    g.admm.threads = 1;
    if (g.threads < 1) throw ConfigError("run.threads must be >= 1");
    return g;
}

inline NetflowSweepConfig netflow_from_config(const KeyValueFile &c) {
    NetflowSweepConfig s;
    s.base = scenario_from_config(c);
    s.pis = c.get_list("sweep.pis", {});
    s.lambdas = detail::list_or_empty(c, "sweep.lambdas");
    s.seeds = static_cast<int>(c.get_int("sweep.seeds"));
    s.threads = static_cast<int>(c.get_int("run.threads"));
    s.admm = admm_from_config(c);
    s.admm.threads = 1;
    if (s.threads < 1) throw ConfigError("run.threads must be >= 1");
    return s;
}

inline BurstCompareConfig burst_from_config(const KeyValueFile &c) {
    BurstCompareConfig b;
    b.nodes = static_cast<int>(c.get_int("burst.nodes"));
    b.d_c = c.get_double("burst.d_c");
    b.flows = c.get_int("burst.flows");
    b.period = c.get_int("burst.period");
    b.train_days = c.get_int("burst.train_days");
    b.validation_days = c.get_int("burst.validation_days");
    b.paths = static_cast<int>(c.get_int("burst.paths"));
    b.rank = c.get_int("burst.rank");
    b.traffic_scale = c.get_double("burst.traffic_scale");
    b.jitter = c.get_double("burst.jitter");
    b.anomalous_fraction = c.get_double("burst.anomalous_fraction");
    b.burst.gamma_f = c.get_double("burst.gamma");
    b.burst.theta = c.get_double("burst.theta");
    b.burst.sigma_n = c.get_double("burst.sigma_n");
    b.burst.alpha = c.get_double("burst.alpha");
    b.burst.nu = c.get_double("burst.nu");
    b.burn_in = c.get_int("burst.burn_in");
    b.row_miss = c.get_double("burst.row_miss");
    b.time_pi = c.get_double("burst.time_pi");
    b.p1_lambda_star = c.get_list("burst.p1_lambda_star", {});
    b.p1_lambda_1 = c.get_list("burst.p1_lambda_1", {});
    b.p5_lambda_star = c.get_list("burst.p5_lambda_star", {});
    b.p5_lambda_1 = c.get_list("burst.p5_lambda_1", {});
    b.admm.max_iters = static_cast<int>(c.get_int("burst.admm_max_iters"));
    b.mm.max_iters = static_cast<int>(c.get_int("burst.mm_max_iters"));
    b.mm.tol = c.get_double("burst.mm_tol");
    b.mm.rho = c.get_int("burst.mm_rho");
    b.mm.pd_floor = c.get_double("burst.pd_floor");
    b.seed = static_cast<std::uint64_t>(c.get_int("run.seed"));
    if (b.burn_in < 0) throw ConfigError("burst.burn_in must be >= 0");
    try {
        b.burst.validate();
        b.admm.validate();
        b.mm.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
    }
    b.validate();
    return b;
}

} // namespace nettomo
