#include <nettomo.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace nettomo;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kDivergence = 3, kSizeGuard = 4 };

struct Options {
    std::string config;
    std::optional<long long> seed;
    std::string out = ".";
    std::string solver;
    std::optional<int> threads;
    std::string scenario_dir;
};

KeyValueFile load_config(const Options &o) {
    KeyValueFile user = o.config.empty() ? KeyValueFile{} : KeyValueFile::read(o.config);
    KeyValueFile c = resolve_config(user);
    if (o.seed) c.set("run.seed", std::to_string(*o.seed));
    if (o.threads) c.set("run.threads", std::to_string(*o.threads));
    if (!o.solver.empty()) c.set("run.solver", o.solver);
    parse_solver(c.get("run.solver"));
    return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish(const fs::path &out, const KeyValueFile &config, RunRecord &rec,
            std::chrono::steady_clock::time_point t0) {
    rec.config = config;
    rec.seed = static_cast<std::uint64_t>(config.get_int("run.seed"));
    rec.wall_seconds = seconds_since(t0);
    config.write(out / "config.txt");
    rec.to_file().write(out / "record.txt");
}

int cmd_synth(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const Scenario s = generate_scenario(scenario_from_config(c));
    const fs::path out = o.out;
    write_topology_csv(out / "topology.csv", s.topology);
    write_matrix_csv(out / "routing.csv", s.routing.entries());
    write_matrix_csv(out / "X0.csv", s.x0);
    write_matrix_csv(out / "A0.csv", s.a0);
    write_mask_csv(out / "mask.csv", s.mask.array());
    write_matrix_csv(out / "Y.csv", s.obs.link_counts());
    write_matrix_csv(out / "Z.csv", s.obs.flow_counts());

    KeyValueFile m;
    m.set("nodes", std::to_string(s.topology.node_count()));
    m.set("links", std::to_string(s.routing.link_count()));
    m.set("flows", std::to_string(s.routing.flow_count()));
    m.set("times", std::to_string(s.x0.cols()));
    m.set("rank", std::to_string(s.params.rank));
    m.set("paths_requested", std::to_string(s.params.paths));
    std::string achieved;
    for (std::size_t f = 0; f < s.routing.paths_achieved().size(); ++f)
        achieved += (f ? "," : "") + std::to_string(s.routing.paths_achieved()[f]);
    m.set("paths_achieved", achieved);
    m.set("nullspace_dim", std::to_string(s.routing.nullspace_dim()));
    m.set("observed_fraction", s.mask.observed_fraction());
    m.set("anomaly_count", std::to_string((s.a0.array() != 0.0).count()));
    m.set("seed", std::to_string(s.params.seed));
    m.set("graph_seed", std::to_string(s.graph_seed));
    m.set("od_pairs", format_od_pairs(s.routing.od_pairs()));
    std::string coords;
    for (std::size_t i = 0; i < s.topology.coords().size(); ++i)
        coords += (i ? ";" : "") + format_double(s.topology.coords()[i].first) + ":" +
                  format_double(s.topology.coords()[i].second);
    m.set("coords", coords);
    m.set("files", std::string("topology.csv,routing.csv,X0.csv,A0.csv,mask.csv,Y.csv,Z.csv"));
    m.write(out / "manifest.txt");

    RunRecord rec;
    rec.metrics["links"] = static_cast<double>(s.routing.link_count());
    rec.metrics["nullspace_dim"] = static_cast<double>(s.routing.nullspace_dim());
    finish(out, c, rec, t0);
    std::cout << "wrote scenario to " << out.string() << " (L=" << s.routing.link_count()
              << ", F=" << s.routing.flow_count() << ", T=" << s.x0.cols()
              << ", dim N_R=" << s.routing.nullspace_dim() << ")\n";
    return kOk;
}

struct LoadedScenario {
    RoutingMatrix routing;
    Observations obs;
    std::optional<Matrix> x0;
    std::optional<Matrix> a0;
};

LoadedScenario load_scenario(const fs::path &dir, bool need_truth) {
    if (dir.empty()) throw ConfigError("a scenario directory is required");
    LoadedScenario s;
    s.routing = RoutingMatrix(read_matrix_csv(dir / "routing.csv"));
    const BoolArray mask = read_mask_csv(dir / "mask.csv");
    const Matrix y = read_matrix_csv(dir / "Y.csv");
    const Matrix z = read_matrix_csv(dir / "Z.csv");
    s.obs = Observations(y, z, SamplingMask(mask));
    s.obs.require_compatible(s.routing);
    if (need_truth || (fs::exists(dir / "X0.csv") && fs::exists(dir / "A0.csv"))) {
        s.x0 = read_matrix_csv(dir / "X0.csv");
        s.a0 = read_matrix_csv(dir / "A0.csv");
        detail::require_same_shape(*s.x0, s.obs.flows(), s.obs.times(), "X0.csv");
        detail::require_same_shape(*s.a0, s.obs.flows(), s.obs.times(), "A0.csv");
    }
    return s;
}

int cmd_solve(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const LoadedScenario s = load_scenario(o.scenario_dir, false);
    const SolverKind kind = parse_solver(c.get("run.solver"));
    const AdmmConfig admm = admm_from_config(c);
    MmConfig mm = mm_from_config(c);

    std::optional<CorrelationSet> corr;
    if (kind == SolverKind::P5) {
        corr = identity_correlations(s.obs.flows(), s.obs.times());
        if (!c.get("mm.r_l").empty()) corr->r_l = read_matrix_csv(c.get("mm.r_l"));
        if (!c.get("mm.r_q").empty()) corr->r_q = read_matrix_csv(c.get("mm.r_q"));
        corr->validate();
    }
    const SolveOutcome r = run_solver(kind, s.obs, s.routing, admm, mm,
                                      corr ? &*corr : nullptr,
                                      mix_seed(static_cast<std::uint64_t>(c.get_int("run.seed")), 99));
    const fs::path out = o.out;
    write_matrix_csv(out / "X_hat.csv", r.x);
    write_matrix_csv(out / "A_hat.csv", r.a);
    if (kind == SolverKind::P6) {
        write_matrix_csv(out / "O_y.csv", r.o_y);
        write_matrix_csv(out / "O_z.csv", r.o_z);
    }
    RunRecord rec;
    rec.iterations[solver_name(kind)] = r.iterations;
    rec.metrics["converged"] = r.converged ? 1.0 : 0.0;
    rec.metrics["objective"] = r.objective;
    if (s.x0) {
        const ErrorMetrics e = relative_errors({r.x, r.a}, {*s.x0, *s.a0});
        rec.metrics["e_x"] = e.e_x;
        rec.metrics["e_a"] = e.e_a;
        rec.metrics["e_xa"] = e.e_xa;
        std::cout << "e_x=" << format_double(e.e_x) << " e_a=" << format_double(e.e_a)
                  << " e_xa=" << format_double(e.e_xa) << '\n';
    }
    finish(out, c, rec, t0);
    std::cout << solver_name(kind) << ": " << r.iterations << " iterations, "
              << (r.converged ? "converged" : "iteration cap reached") << '\n';
    return kOk;
}

int cmd_phase_grid(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const PhaseGridConfig g = phase_grid_from_config(c);
    const PhaseGridResult res = run_phase_grid(g);
    const fs::path out = o.out;
    write_matrix_csv(out / "phase_errors.csv", res.errors);
    write_matrix_csv(out / "phase_iterations.csv", res.mean_iterations);
    write_pgm(out / "phase.pgm", res.errors);
    {
        auto f = detail::open_out(out / "phase_failures.txt");
        for (const auto &msg : res.failures) f << msg << '\n';
    }
    RunRecord rec;
    rec.metrics["white_cells"] = static_cast<double>(res.white_cells());
    rec.metrics["failures"] = static_cast<double>(res.failures.size());
    for (std::size_t i = 0; i < g.ranks.size(); ++i)
        for (std::size_t j = 0; j < g.sparsities.size(); ++j)
            rec.metrics["e_xa.r" + std::to_string(g.ranks[i]) + ".s" +
                        std::to_string(g.sparsities[j])] = res.errors(i, j);
    finish(out, c, rec, t0);
    std::cout << "phase grid " << g.ranks.size() << "x" << g.sparsities.size() << ": "
              << res.white_cells() << " white cells, " << res.failures.size() << " failures\n";
    return kOk;
}

int cmd_netflow_sweep(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const auto pts = run_netflow_sweep(netflow_from_config(c));
    Matrix table(static_cast<Index>(pts.size()), 4);
    RunRecord rec;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        table.row(static_cast<Index>(i)) << pts[i].pi, pts[i].e_x, pts[i].e_a, pts[i].e_xa;
        const std::string k = "pi" + format_double(pts[i].pi);
        rec.metrics["e_x." + k] = pts[i].e_x;
        rec.metrics["e_a." + k] = pts[i].e_a;
        std::cout << "pi=" << pts[i].pi << " e_x=" << pts[i].e_x << " e_a=" << pts[i].e_a << '\n';
    }
    const fs::path out = o.out;
    write_matrix_csv(out / "netflow.csv", table);
    finish(out, c, rec, t0);
    return kOk;
}

int cmd_burst_compare(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const BurstCompareResult r = run_burst_compare(burst_from_config(c));
    const fs::path out = o.out;

    Index flow = c.get_int("burst.series_flow");
    if (flow < 0) flow = r.dark_rows.empty() ? 0 : r.dark_rows.front();
    if (flow >= r.x0.rows()) throw ConfigError("burst.series_flow out of range");
    Matrix series(r.x0.cols(), 7);
    for (Index t = 0; t < r.x0.cols(); ++t)
        series.row(t) << double(t), r.x0(flow, t), r.p1.x(flow, t), r.p5.x(flow, t),
            r.a0(flow, t), r.p1.a(flow, t), r.p5.a(flow, t);
    write_matrix_csv(out / "series.csv", series);
    write_matrix_csv(out / "anomaly_map_true.csv", r.a0);
    write_matrix_csv(out / "anomaly_map_p1.csv", r.p1.a);
    write_matrix_csv(out / "anomaly_map_p5.csv", r.p5.a);
    write_mask_csv(out / "mask.csv", r.mask.array());

    RunRecord rec;
    for (const auto &[name, m] : {std::pair{"p1", &r.p1}, std::pair{"p5", &r.p5}}) {
        const std::string n = name;
        rec.metrics[n + ".e_x"] = m->metrics.e_x;
        rec.metrics[n + ".e_a"] = m->metrics.e_a;
        rec.metrics[n + ".lambda_star"] = m->lambda_star;
        rec.metrics[n + ".lambda_1"] = m->lambda_1;
        rec.metrics[n + ".dark_row_pearson"] = m->dark_row_pearson;
        rec.iterations[n] = m->iterations;
        std::cout << n << ": e_x=" << m->metrics.e_x << " e_a=" << m->metrics.e_a << '\n';
    }
    rec.metrics["series_flow"] = static_cast<double>(flow);
    finish(out, c, rec, t0);
    return kOk;
}

int cmd_diagnose(const Options &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const KeyValueFile c = load_config(o);
    const LoadedScenario s = load_scenario(o.scenario_dir, true);
    const Index f = s.obs.flows(), t = s.obs.times();
    const fs::path out = o.out;
    const SubspaceBundle bundle = SubspaceBundle::from_truth(*s.x0, *s.a0);

    KeyValueFile rep;
    rep.set("flows", std::to_string(f));
    rep.set("times", std::to_string(t));
    rep.set("links", std::to_string(s.routing.link_count()));
    rep.set("rank_x0", std::to_string(bundle.rank()));
    rep.set("support_size", std::to_string(bundle.support().count()));
    rep.set("nullspace_dim", std::to_string(s.routing.nullspace_dim()));

    int code = kOk;
    try {
        const IncoherenceReport inc = incoherence_report(s.routing.entries(), s.obs.mask(), bundle);
        for (const auto &[k, v] : std::initializer_list<std::pair<const char *, double>>{
                 {"alpha", inc.alpha}, {"beta", inc.beta}, {"xi", inc.xi}, {"nu", inc.nu},
                 {"eta", inc.eta}, {"tau", inc.tau}, {"gamma", inc.gamma},
                 {"k_max_col", inc.k_max_col}, {"chi", inc.chi},
                 {"lambda_min", inc.lambda_min}, {"lambda_max", inc.lambda_max}})
            rep.set(k, v);
        rep.set("tau_exact", std::string(inc.tau_exact ? "true" : "false"));
        rep.set("intersection_dim", std::to_string(inc.intersection_dim));
        rep.set("feasible", std::string(inc.feasible ? "true" : "false"));
        rep.set("reason", inc.reason.empty() ? std::string("ok") : inc.reason);

        const AdmmConfig admm = admm_from_config(c);
        const double lam = inc.feasible ? 0.5 * (inc.lambda_min + inc.lambda_max)
                                        : admm.resolved_lambda(f, t);
        rep.set("certificate.lambda", lam);
        try {
            const CertificateResult cert = dual_certificate(
                s.routing.entries(), s.obs.mask(), bundle, sign_pattern(*s.a0), lam, &inc);
            for (const auto &[k, v] : std::initializer_list<std::pair<const char *, bool>>{
                     {"certificate.c1", cert.c1}, {"certificate.c2", cert.c2},
                     {"certificate.c3", cert.c3}, {"certificate.c4", cert.c4},
                     {"certificate.c5", cert.c5}, {"certificate.condition_a", cert.condition_a},
                     {"certificate.condition_b", cert.condition_b},
                     {"certificate.pass", cert.all_pass()}})
                rep.set(k, std::string(v ? "true" : "false"));
            rep.set("certificate.c4_value", cert.c4_value);
            rep.set("certificate.c5_value", cert.c5_value);
            rep.set("certificate.theta", cert.theta);
        } catch (const IdentifiabilityError &e) {
            rep.set("certificate.pass", std::string("false"));
            rep.set("certificate.error", std::string(e.what()));
        }
    } catch (const SizeGuardError &e) {
        rep.set("omitted", std::string("incoherence,tau,lambda_range,certificate"));
        rep.set("omission_reason", std::string(e.what()));
        code = kSizeGuard;
    }
    rep.write(out / "diagnose.txt");
    RunRecord rec;
    finish(out, c, rec, t0);
    for (const auto &k : rep.keys()) std::cout << k << '=' << rep.get(k) << '\n';
    return code;
}

std::string config_help() {
    std::ostringstream os;
    os << "\nConfiguration keys (key=value, '[section]' headers prefix keys):\n";
    for (const auto &k : config_keys()) {
        os << "  " << k.key;
        for (std::size_t i = std::string(k.key).size(); i < 26; ++i) os << ' ';
        os << ' ' << k.help << " [" << k.fallback << "]\n";
    }
    os << "\nExit codes: 0 ok, 1 other failure, 2 configuration or input error, "
          "3 solver divergence, 4 size guard\n";
    return os.str();
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Network traffic and anomaly map estimation"};
    app.footer(config_help());
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", o.config, "configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "base seed");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--solver", o.solver, "p1 | p2 | p5 | p6");
        sub->add_option("--threads", o.threads, "worker threads");
    };
    auto *synth = app.add_subcommand("synth", "generate a synthetic scenario");
    auto *solve = app.add_subcommand("solve", "estimate traffic and anomalies for a scenario");
    auto *grid = app.add_subcommand("phase-grid", "rank/sparsity phase-transition grid");
    auto *sweep = app.add_subcommand("netflow-sweep", "error versus NetFlow sampling fraction");
    auto *burst = app.add_subcommand("burst-compare", "convex versus correlation-aware estimator on bursty traffic");
    auto *diag = app.add_subcommand("diagnose", "incoherence report and dual certificate");
    for (auto *sub : {synth, solve, grid, sweep, burst, diag}) add_common(sub);
    solve->add_option("scenario", o.scenario_dir, "scenario directory")->required();
    diag->add_option("scenario", o.scenario_dir, "scenario directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*solve) return cmd_solve(o);
        if (*grid) return cmd_phase_grid(o);
        if (*sweep) return cmd_netflow_sweep(o);
        if (*burst) return cmd_burst_compare(o);
        if (*diag) return cmd_diagnose(o);
    } catch (const SizeGuardError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kSizeGuard;
    } catch (const DivergenceError &e) {
        std::cerr << "error: solver diverged at iteration " << e.iteration() << ": " << e.what()
                  << '\n';
        return kDivergence;
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ParseError &e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kConfig;
    } catch (const InvalidArgument &e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const DimensionError &e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
