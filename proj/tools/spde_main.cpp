// Command-line front end: run (benchmark tables), convergence (empirical
// order study), figure (scatter export of one time node).
//
// Exit codes: 0 success, 2 config or validation error, 3 numeric or training
// failure.

#include <CLI11.hpp>

#include <spde/spde.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";

const char* kConfigHelp = R"(Config keys (JSON):
  problem.name         problem family, only "benchmark" (default "benchmark")
  problem.d            state dimension (required when a config file is given)
  problem.horizon      time horizon T (default 1.0)
  grid.n_steps         number of time steps N (required when a config file is given)
  architecture.hidden_width   hidden layer width (default: 11 for d=1, d+10 for d<50, d+50 otherwise)
  architecture.hidden_depth   number of hidden layers (default 2)
  training.batch_size         mini-batch size (default 64)
  training.epochs             epochs per time step (default 100)
  training.iterations_per_epoch  iterations per epoch (default 100)
  training.initial_rate       initial learning rate (default 0.01)
  training.patience           epochs without improvement before halving the rate (default 10)
  training.warm_start         initialize each step from the next step's networks (default false)
  training.eval_samples       inference batch for figures and diagnostics (default 10000)
  report.n_bpaths             noise paths per report (default 5)
  report.n_runs               independent trainings per noise path (default 5)
  report.x_eval               evaluation point, d entries (default: the origin)
  convergence.n_steps_list    grid refinements (default [8,16,32,64])
  convergence.n_bpaths        noise paths per refinement (default 20)
  convergence.corrector       "regression" or "neural" (default "regression")
  convergence.regression.basis_degree       polynomial degree (default 5)
  convergence.regression.sample_count       regression sample paths (default 100000)
  convergence.regression.picard_iterations  driver fixed-point passes (default 1)
  seed                 master seed (default 1); env SPDE_SEED overrides, --seed wins
  output_dir           artifact directory (default "out"); env SPDE_OUT overrides, --out wins
  workers              parallel solver cells for `run` (default 1)
)";

struct CommonOpts {
    std::string config_path;
    int d_flag = 0;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    int workers_override = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file (see spde --help for keys)");
    cmd->add_option("--d", o.d_flag, "run the benchmark defaults for this dimension (no config file)");
    cmd->add_option("--out", o.out_override, "output directory override");
    cmd->add_option("--seed", o.seed_override, "master seed override")->each([&o](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_option("--workers", o.workers_override, "worker thread override");
}

spde::ExperimentConfig resolve_config(const CommonOpts& o) {
    if (!o.config_path.empty() && o.d_flag > 0)
        throw spde::ConfigError("--d cannot be combined with --config");
    spde::ExperimentConfig cfg = o.config_path.empty()
                                     ? spde::default_config(o.d_flag > 0 ? o.d_flag : 1)
                                     : spde::load_config_file(o.config_path);
    spde::apply_env_overrides(cfg);
    if (o.seed_set) cfg.seed = o.seed_override;
    if (!o.out_override.empty()) cfg.output_dir = o.out_override;
    if (o.workers_override > 0) cfg.workers = o.workers_override;
    cfg.validate();
    return cfg;
}

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const spde::ExperimentConfig& cfg, double wall_seconds,
                    const std::vector<std::string>& outputs) {
    spde::json m;
    m["format"] = "spde-manifest-v1";
    m["tool"] = {{"name", "spde"}, {"version", kToolVersion}};
    m["command"] = command;
    m["config"] = spde::config_to_json(cfg);
    m["config_hash"] = hash_hex(spde::config_hash(cfg));
    m["wall_clock_seconds"] = wall_seconds;
    m["outputs"] = outputs;
    spde::detail::write_json_file(dir / "manifest.json", m);
}

std::string cell_dir_name(int bpath, int run) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "bpath_%02d/run_%02d", bpath, run);
    return buf;
}

int cmd_run(const spde::ExperimentConfig& cfg, int export_paths, bool checkpoints) {
    const spde::ProblemSpec p = spde::make_problem(cfg);
    const spde::TimeGrid grid = spde::make_uniform_grid(cfg.horizon, cfg.n_steps);
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    spde::JsonlLogger log(out / "log.jsonl");
    log.write({{"event", "run_start"},
               {"config_hash", hash_hex(spde::config_hash(cfg))},
               {"seed", cfg.seed},
               {"workers", cfg.workers}});

    spde::ReportOptions ropt;
    ropt.seed = cfg.seed;
    ropt.n_bpaths = cfg.n_bpaths;
    ropt.n_runs = cfg.n_runs;
    ropt.x_eval = cfg.x_eval_vector();
    ropt.workers = cfg.workers;
    if (cfg.workers == 1)
        ropt.on_epoch = [&log](int bp, int run, int step, int epoch, double loss, double rate) {
            std::cerr << "bpath " << bp << " run " << run << " step " << step << " epoch "
                      << epoch << " loss " << spde::detail::num(loss) << " rate "
                      << spde::detail::num(rate) << '\n';
            log.write({{"event", "epoch"},
                       {"bpath", bp},
                       {"run", run},
                       {"step", step},
                       {"epoch", epoch},
                       {"loss", loss},
                       {"rate", rate}});
        };
    ropt.on_cell = [&log](int bp, int run, double value, bool ok, const std::string& err) {
        std::cerr << "bpath " << bp << " run " << run
                  << (ok ? " done, value " + spde::detail::num(value) : " FAILED: " + err) << '\n';
        log.write({{"event", "cell_done"},
                   {"bpath", bp},
                   {"run", run},
                   {"value", value},
                   {"ok", ok},
                   {"error", err}});
    };
    if (checkpoints)
        ropt.on_solution = [&](int bp, int run, const spde::SchemeSolution& sol) {
            spde::save_solution(out / "solutions" / cell_dir_name(bp, run), sol, cfg.training);
        };

    const auto t0 = std::chrono::steady_clock::now();
    const spde::RunReport report = spde::run_report(p, grid, cfg.training, ropt);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    spde::write_report_csv(out / "report.csv", report);
    spde::write_report_json(out / "report.json", report);
    std::vector<std::string> outputs = {"report.csv", "report.json", "log.jsonl"};

    if (export_paths > 0) {
        spde::StreamFactory fac(cfg.seed);
        spde::RngStream x0_rng = fac.stream(spde::Stream::Shuffle, {0xECu});
        spde::RngStream w_rng = fac.stream(spde::Stream::W, {0xECu});
        spde::Matrix x0(export_paths, p.d);
        p.sample_x0(x0_rng, x0);
        const spde::Matrix w = spde::sample_increments(grid, p.d, export_paths, w_rng);
        const spde::Matrix paths = spde::simulate_forward(p, grid, x0, w);
        spde::write_paths_csv(out / "paths.csv", grid, paths, p.d);
        outputs.push_back("paths.csv");
    }
    if (checkpoints) outputs.push_back("solutions/");

    log.write({{"event", "report_done"},
               {"relative_l2", report.relative_l2},
               {"failed_cells", report.failed_cells}});
    write_manifest(out, "run", cfg, wall, outputs);

    std::cout << "bpath  approx_mean           exact                 std_dev               rel_error\n";
    for (const auto& row : report.rows) {
        if (row.failed) {
            std::cout << row.bpath << "      FAILED\n";
            continue;
        }
        std::printf("%-6d %-21.15g %-21.15g %-21.15g %-21.15g\n", row.bpath, row.mean, row.exact,
                    row.std_dev, row.rel_error);
    }
    std::cout << "relative L2 error: " << spde::detail::num(report.relative_l2) << '\n';
    std::cout << "report written to " << out.string() << '\n';
    return report.failed_cells > 0 ? 3 : 0;
}

int cmd_convergence(const spde::ExperimentConfig& cfg, bool selftest) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    if (selftest) {
        // synthetic mse = c * mesh: the fitted slope must be 1
        std::vector<spde::ConvergencePoint> pts;
        for (int n : cfg.convergence_steps) {
            spde::ConvergencePoint pt;
            pt.n_steps = n;
            pt.mesh = cfg.horizon / n;
            pt.mse = 0.37 * pt.mesh;
            pt.std_error = 0.0;
            pts.push_back(pt);
        }
        const spde::ConvergenceReport rep = spde::fit_loglog(pts);
        std::cout << "selftest slope " << spde::detail::num(rep.slope) << '\n';
        return 0;
    }

    const spde::ProblemSpec p = spde::make_problem(cfg);
    spde::JsonlLogger log(out / "log.jsonl");
    log.write({{"event", "convergence_start"},
               {"config_hash", hash_hex(spde::config_hash(cfg))},
               {"seed", cfg.seed}});

    spde::ConvergenceOptions copt;
    copt.seed = cfg.seed;
    copt.n_bpaths = cfg.convergence_bpaths;
    copt.x_eval = cfg.x_eval_vector();
    copt.corrector = cfg.corrector == "neural" ? spde::CorrectorKind::Neural
                                               : spde::CorrectorKind::Regression;
    copt.regression = cfg.regression;
    copt.on_cell = [&log](int n_steps, int bpath, double sq_err, bool ok) {
        std::cerr << "N " << n_steps << " bpath " << bpath
                  << (ok ? " sq_err " + spde::detail::num(sq_err) : " FAILED") << '\n';
        log.write({{"event", "convergence_cell"},
                   {"n_steps", n_steps},
                   {"bpath", bpath},
                   {"sq_err", sq_err},
                   {"ok", ok}});
    };

    const auto t0 = std::chrono::steady_clock::now();
    const spde::ConvergenceReport rep =
        spde::convergence_study(p, cfg.convergence_steps, cfg.training, copt);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    spde::write_convergence_csv(out / "convergence.csv", rep);
    log.write({{"event", "convergence_done"}, {"slope", rep.slope}});
    write_manifest(out, "convergence", cfg, wall, {"convergence.csv", "log.jsonl"});

    for (const auto& pt : rep.points)
        std::cout << "N " << pt.n_steps << " mesh " << spde::detail::num(pt.mesh) << " mse "
                  << spde::detail::num(pt.mse) << " stderr " << spde::detail::num(pt.std_error)
                  << '\n';
    std::cout << "slope " << spde::detail::num(rep.slope) << " ci95 ["
              << spde::detail::num(rep.slope_ci_lo) << ", " << spde::detail::num(rep.slope_ci_hi)
              << "]\n";
    std::cout << "study written to " << out.string() << '\n';
    return 0;
}

int cmd_figure(const spde::ExperimentConfig& cfg, int step, int points,
               const std::string& solution_dir) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    spde::SchemeSolution sol;
    if (!solution_dir.empty()) {
        sol = spde::load_solution(solution_dir);
    } else {
        std::cerr << "no --solution given; training a fresh solution first\n";
        const spde::ProblemSpec p = spde::make_problem(cfg);
        const spde::TimeGrid grid = spde::make_uniform_grid(cfg.horizon, cfg.n_steps);
        spde::StreamFactory fac(cfg.seed);
        spde::RngStream b_rng = fac.stream(spde::Stream::B, {0});
        spde::Matrix b = spde::sample_noise_path(grid, p.l, b_rng);
        spde::SolveOptions so;
        so.seed = cfg.seed;
        so.progress = [](int s, int epoch, double loss, double rate) {
            std::cerr << "step " << s << " epoch " << epoch << " loss " << spde::detail::num(loss)
                      << " rate " << spde::detail::num(rate) << '\n';
        };
        sol = spde::solve(p, grid, std::move(b), cfg.training, so);
    }

    if (points <= 0) points = cfg.training.eval_samples;
    spde::StreamFactory fac(cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const spde::FigureData data =
        spde::figure_export(sol, step, points, fac.stream(spde::Stream::Shuffle, {0xF1u}),
                            fac.stream(spde::Stream::W, {0xF1u}));
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string name = "figure_step_" + std::to_string(step) + ".csv";
    spde::write_figure_csv(out / name, data);
    write_manifest(out, "figure", cfg, wall, {name});

    double mae = 0.0;
    for (std::size_t i = 0; i < data.xbar.size(); ++i)
        mae += std::abs(data.approx[i] - data.exact[i]);
    mae /= static_cast<double>(data.xbar.size());
    std::cout << "figure at t " << spde::detail::num(data.t) << " with " << data.xbar.size()
              << " points, mean abs error " << spde::detail::num(mae) << '\n';
    std::cout << "figure written to " << (out / name).string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("spde: predictor-corrector solver for backward stochastic PDEs\n\n") +
                 kConfigHelp};
    app.require_subcommand(1);

    CommonOpts run_opts, conv_opts, fig_opts;
    int export_paths = 0;
    bool no_checkpoints = false;
    CLI::App* run = app.add_subcommand("run", "train the scheme and produce the benchmark table");
    add_common(run, run_opts);
    run->add_option("--export-paths", export_paths, "also write this many forward paths to paths.csv");
    run->add_flag("--no-checkpoints", no_checkpoints, "skip writing per-step network checkpoints");

    bool selftest = false;
    CLI::App* conv = app.add_subcommand("convergence", "empirical order study over grid refinements");
    add_common(conv, conv_opts);
    conv->add_flag("--selftest-slope", selftest, "fit a synthetic first-order dataset and exit");

    int fig_step = 1;
    int fig_points = 0;
    std::string solution_dir;
    CLI::App* fig = app.add_subcommand("figure", "export approximate vs exact values at one node");
    add_common(fig, fig_opts);
    fig->add_option("--step", fig_step, "time node index i of the export (default 1)");
    fig->add_option("--points", fig_points, "number of simulated paths (default training.eval_samples)");
    fig->add_option("--solution", solution_dir, "reuse a saved solution directory instead of training");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(run)) return cmd_run(resolve_config(run_opts), export_paths, !no_checkpoints);
        if (app.got_subcommand(conv)) return cmd_convergence(resolve_config(conv_opts), selftest);
        if (app.got_subcommand(fig))
            return cmd_figure(resolve_config(fig_opts), fig_step, fig_points, solution_dir);
    } catch (const spde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return 2;
    } catch (const spde::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
