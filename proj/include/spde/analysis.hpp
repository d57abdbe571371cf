#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "spde/regression.hpp"
#include "spde/scheme.hpp"

namespace spde {

/// sqrt( sum_i (approx_i - exact_i)^2 / sum_i exact_i^2 ) over paired samples.
inline double relative_l2_error(const std::vector<double>& approx,
                                const std::vector<double>& exact) {
    if (approx.size() != exact.size() || approx.empty())
        throw std::invalid_argument("relative_l2_error: mismatched or empty samples");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < approx.size(); ++i) {
        num += (approx[i] - exact[i]) * (approx[i] - exact[i]);
        den += exact[i] * exact[i];
    }
    if (den == 0.0) throw std::invalid_argument("relative_l2_error: exact values are all zero");
    return std::sqrt(num / den);
}

/// Unbiased sample standard deviation (divisor n-1); zero for fewer than two
/// samples.
inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Deterministic salt of one (noise path, optimization run) cell. Exposed so
/// any cell can be reproduced in isolation from the report metadata.
inline std::uint64_t cell_salt(int bpath, int run) {
    return substream(Stream::W, {0x9d5ful, static_cast<std::uint64_t>(bpath),
                                 static_cast<std::uint64_t>(run)});
}

struct ReportRow {
    int bpath = 0;
    Vector b_tail;                        // B_T - B_0 of this noise path
    std::vector<double> run_values;       // successful runs only
    std::vector<std::string> run_errors;  // one entry per run; empty = success
    double mean = std::numeric_limits<double>::quiet_NaN();
    double exact = std::numeric_limits<double>::quiet_NaN();
    double std_dev = std::numeric_limits<double>::quiet_NaN();
    double rel_error = std::numeric_limits<double>::quiet_NaN();
    bool exact_near_zero = false;  // rel_error column holds the absolute error
    bool failed = false;           // no run of this row succeeded
};

struct RunReport {
    std::string problem_name;
    int d = 0, k = 0, l = 0;
    double horizon = 0.0;
    int n_steps = 0;
    TrainConfig config;
    std::uint64_t seed = 0;
    int n_bpaths = 0, n_runs = 0;
    Vector x_eval;
    std::vector<ReportRow> rows;
    double relative_l2 = std::numeric_limits<double>::quiet_NaN();
    int failed_cells = 0;
};

/// Cell completion hook: (bpath, run, value, ok, error message).
using CellProgressFn = std::function<void(int, int, double, bool, const std::string&)>;

/// Epoch hook with cell context: (bpath, run, step, epoch, loss, rate).
using CellEpochFn = std::function<void(int, int, int, int, double, double)>;

struct ReportOptions {
    std::uint64_t seed = 1;
    int n_bpaths = 5;
    int n_runs = 5;
    Vector x_eval;  // defaults to the origin
    int workers = 1;
    CellProgressFn on_cell;
    CellEpochFn on_epoch;  // forwarded into solve when workers == 1
    /// Solution sink, called before a cell's networks are discarded. Cells
    /// run concurrently when workers > 1; sinks must tolerate that.
    std::function<void(int, int, const SchemeSolution&)> on_solution;
    /// Test hook: when set, replaces the per-cell salt derivation.
    std::function<std::uint64_t(int, int)> salt_override;
};

/// Benchmark-table harness: n_bpaths independent noise paths, n_runs
/// independent trainings per path, evaluation of U_0 at x_eval. Rows are
/// ordered by noise path; every cell is a pure function of (seed, bpath, run),
/// so worker count cannot change the result. Solve failures are recorded per
/// cell and the report is still produced.
inline RunReport run_report(const ProblemSpec& p, const TimeGrid& grid, const TrainConfig& cfg,
                            const ReportOptions& opt) {
    p.validate();
    cfg.validate();
    if (p.k != 1) throw std::invalid_argument("run_report requires a scalar problem (k = 1)");
    if (opt.n_bpaths < 1 || opt.n_runs < 1)
        throw std::invalid_argument("run_report needs at least one noise path and one run");
    if (!p.exact) throw std::invalid_argument("run_report requires an exact oracle");

    RunReport report;
    report.problem_name = p.name;
    report.d = p.d;
    report.k = p.k;
    report.l = p.l;
    report.horizon = grid.horizon();
    report.n_steps = grid.num_steps();
    report.config = cfg;
    report.seed = opt.seed;
    report.n_bpaths = opt.n_bpaths;
    report.n_runs = opt.n_runs;
    report.x_eval = opt.x_eval.size() ? opt.x_eval : Vector(Vector::Zero(p.d));
    if (report.x_eval.size() != p.d)
        throw std::invalid_argument("run_report: x_eval extent differs from d");

    StreamFactory fac(opt.seed);
    std::vector<Matrix> bpaths(static_cast<std::size_t>(opt.n_bpaths));
    for (int bp = 0; bp < opt.n_bpaths; ++bp) {
        RngStream b_rng = fac.stream(Stream::B, {static_cast<std::uint64_t>(bp)});
        bpaths[static_cast<std::size_t>(bp)] = sample_noise_path(grid, p.l, b_rng);
    }

    const int total = opt.n_bpaths * opt.n_runs;
    std::vector<double> values(static_cast<std::size_t>(total), 0.0);
    std::vector<std::string> errors(static_cast<std::size_t>(total));
    std::vector<char> ok(static_cast<std::size_t>(total), 0);

    Matrix x_eval_row = report.x_eval.transpose();
    auto run_cell = [&](int cell) {
        const int bp = cell / opt.n_runs;
        const int run = cell % opt.n_runs;
        SolveOptions so;
        so.seed = opt.seed;
        so.run_salt = opt.salt_override ? opt.salt_override(bp, run) : cell_salt(bp, run);
        if (opt.workers == 1 && opt.on_epoch)
            so.progress = [&opt, bp, run](int step, int epoch, double loss, double rate) {
                opt.on_epoch(bp, run, step, epoch, loss, rate);
            };
        try {
            SchemeSolution sol =
                solve(p, grid, bpaths[static_cast<std::size_t>(bp)], cfg, so);
            values[static_cast<std::size_t>(cell)] = evaluate_solution(sol, 0, x_eval_row)(0, 0);
            ok[static_cast<std::size_t>(cell)] = 1;
            if (opt.on_solution) opt.on_solution(bp, run, sol);
        } catch (const NumericError& e) {
            errors[static_cast<std::size_t>(cell)] = e.what();
        }
    };

    if (opt.workers <= 1) {
        for (int cell = 0; cell < total; ++cell) {
            run_cell(cell);
            if (opt.on_cell)
                opt.on_cell(cell / opt.n_runs, cell % opt.n_runs,
                            values[static_cast<std::size_t>(cell)],
                            ok[static_cast<std::size_t>(cell)] != 0,
                            errors[static_cast<std::size_t>(cell)]);
        }
    } else {
        std::atomic<int> next{0};
        std::mutex cb_mutex;
        auto worker = [&] {
            for (;;) {
                const int cell = next.fetch_add(1);
                if (cell >= total) return;
                run_cell(cell);
                if (opt.on_cell) {
                    std::lock_guard<std::mutex> lock(cb_mutex);
                    opt.on_cell(cell / opt.n_runs, cell % opt.n_runs,
                                values[static_cast<std::size_t>(cell)],
                                ok[static_cast<std::size_t>(cell)] != 0,
                                errors[static_cast<std::size_t>(cell)]);
                }
            }
        };
        std::vector<std::thread> pool;
        const int count = std::min(opt.workers, total);
        pool.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<double> means, exacts;
    for (int bp = 0; bp < opt.n_bpaths; ++bp) {
        ReportRow row;
        row.bpath = bp;
        row.b_tail = tail_increment(bpaths[static_cast<std::size_t>(bp)], 0);
        for (int run = 0; run < opt.n_runs; ++run) {
            const int cell = bp * opt.n_runs + run;
            row.run_errors.push_back(errors[static_cast<std::size_t>(cell)]);
            if (ok[static_cast<std::size_t>(cell)])
                row.run_values.push_back(values[static_cast<std::size_t>(cell)]);
            else
                ++report.failed_cells;
        }
        row.exact = exact_solution(p, 0.0, x_eval_row, row.b_tail)(0, 0);
        if (row.run_values.empty()) {
            row.failed = true;
        } else {
            row.mean = std::accumulate(row.run_values.begin(), row.run_values.end(), 0.0) /
                       static_cast<double>(row.run_values.size());
            row.std_dev = sample_std(row.run_values);
            if (std::abs(row.exact) < 1e-8) {
                row.exact_near_zero = true;
                row.rel_error = std::abs(row.mean - row.exact);
            } else {
                row.rel_error = std::abs(row.mean - row.exact) / std::abs(row.exact);
            }
            means.push_back(row.mean);
            exacts.push_back(row.exact);
        }
        report.rows.push_back(std::move(row));
    }
    if (!means.empty()) report.relative_l2 = relative_l2_error(means, exacts);
    return report;
}

// ---- convergence study ------------------------------------------------------

enum class CorrectorKind { Neural, Regression };

struct ConvergencePoint {
    int n_steps = 0;
    double mesh = 0.0;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double std_error = std::numeric_limits<double>::quiet_NaN();
    int failures = 0;
};

struct ConvergenceReport {
    std::vector<ConvergencePoint> points;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double slope_stderr = std::numeric_limits<double>::quiet_NaN();
    double slope_ci_lo = std::numeric_limits<double>::quiet_NaN();
    double slope_ci_hi = std::numeric_limits<double>::quiet_NaN();
};

/// Ordinary least squares of y on x with slope standard error and a 95%
/// normal-approximation interval. Needs at least three points.
inline void fit_line(const std::vector<double>& x, const std::vector<double>& y, double& slope,
                     double& intercept, double& stderr_out) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3) throw std::invalid_argument("fit_line needs at least three points");
    const double xm = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - xm) * (x[i] - xm);
        sxy += (x[i] - xm) * (y[i] - ym);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
    slope = sxy / sxx;
    intercept = ym - slope * xm;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (intercept + slope * x[i]);
        sse += r * r;
    }
    stderr_out = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
}

/// Fits log(mse) against log(mesh); the empirical order of the scheme is the
/// fitted slope.
inline ConvergenceReport fit_loglog(const std::vector<ConvergencePoint>& points) {
    ConvergenceReport rep;
    rep.points = points;
    std::vector<double> lx, ly;
    for (const auto& pt : points) {
        if (!(pt.mse > 0.0) || !std::isfinite(pt.mse)) continue;
        lx.push_back(std::log(pt.mesh));
        ly.push_back(std::log(pt.mse));
    }
    fit_line(lx, ly, rep.slope, rep.intercept, rep.slope_stderr);
    rep.slope_ci_lo = rep.slope - 1.96 * rep.slope_stderr;
    rep.slope_ci_hi = rep.slope + 1.96 * rep.slope_stderr;
    return rep;
}

struct ConvergenceOptions {
    std::uint64_t seed = 1;
    int n_bpaths = 20;
    Vector x_eval;  // defaults to the origin
    CorrectorKind corrector = CorrectorKind::Regression;
    RegressionConfig regression;
    int workers = 1;
    std::function<void(int n_steps, int bpath, double sq_err, bool ok)> on_cell;
};

/// Mean squared error of U_0(x_eval) against the exact oracle over fresh
/// noise paths, one point per grid refinement, with the fitted log-log slope.
/// The step counts must be strictly increasing and at least three.
inline ConvergenceReport convergence_study(const ProblemSpec& p, const std::vector<int>& n_list,
                                           const TrainConfig& cfg, const ConvergenceOptions& opt) {
    p.validate();
    if (p.k != 1) throw std::invalid_argument("convergence_study requires a scalar problem (k = 1)");
    if (!p.exact) throw std::invalid_argument("convergence_study requires an exact oracle");
    if (n_list.size() < 3)
        throw std::invalid_argument("convergence_study needs at least three grid refinements");
    for (std::size_t i = 0; i + 1 < n_list.size(); ++i)
        if (n_list[i] >= n_list[i + 1])
            throw std::invalid_argument("convergence_study: step counts must be strictly increasing");
    if (opt.n_bpaths < 2)
        throw std::invalid_argument("convergence_study needs at least two noise paths");
    if (opt.corrector == CorrectorKind::Regression && p.d > 2)
        throw std::invalid_argument("convergence_study: the regression corrector supports d <= 2 only");

    Vector x_eval = opt.x_eval.size() ? opt.x_eval : Vector(Vector::Zero(p.d));
    if (x_eval.size() != p.d)
        throw std::invalid_argument("convergence_study: x_eval extent differs from d");
    Matrix x_eval_row = x_eval.transpose();
    StreamFactory fac(opt.seed);

    std::vector<ConvergencePoint> points;
    for (int n_steps : n_list) {
        const TimeGrid grid = make_uniform_grid(p.horizon, n_steps);
        ConvergencePoint pt;
        pt.n_steps = n_steps;
        pt.mesh = grid.mesh;
        std::vector<double> sq_errs;
        for (int bp = 0; bp < opt.n_bpaths; ++bp) {
            RngStream b_rng = fac.stream(Stream::B, {static_cast<std::uint64_t>(n_steps),
                                                     static_cast<std::uint64_t>(bp)});
            Matrix b = sample_noise_path(grid, p.l, b_rng);
            const double exact = exact_solution(p, 0.0, x_eval_row, tail_increment(b, 0))(0, 0);
            bool cell_ok = false;
            double sq = 0.0;
            try {
                double value;
                const std::uint64_t salt = cell_salt(bp, n_steps);
                if (opt.corrector == CorrectorKind::Regression) {
                    RngStream x0_rng = fac.stream(Stream::Shuffle,
                                                  {salt, static_cast<std::uint64_t>(n_steps)});
                    RngStream w_rng =
                        fac.stream(Stream::W, {salt, static_cast<std::uint64_t>(n_steps)});
                    RegressionSolution sol = regression_corrector_solve(
                        p, grid, std::move(b), opt.regression, x0_rng, w_rng);
                    value = evaluate_regression(sol, 0, x_eval_row)(0, 0);
                } else {
                    SolveOptions so;
                    so.seed = opt.seed;
                    so.run_salt = salt;
                    SchemeSolution sol = solve(p, grid, std::move(b), cfg, so);
                    value = evaluate_solution(sol, 0, x_eval_row)(0, 0);
                }
                sq = (value - exact) * (value - exact);
                sq_errs.push_back(sq);
                cell_ok = true;
            } catch (const NumericError&) {
                ++pt.failures;
            }
            if (opt.on_cell) opt.on_cell(n_steps, bp, sq, cell_ok);
        }
        if (!sq_errs.empty()) {
            pt.mse = std::accumulate(sq_errs.begin(), sq_errs.end(), 0.0) /
                     static_cast<double>(sq_errs.size());
            pt.std_error = sample_std(sq_errs) / std::sqrt(static_cast<double>(sq_errs.size()));
        }
        points.push_back(std::move(pt));
    }
    return fit_loglog(points);
}

// ---- figure export ----------------------------------------------------------

/// Scatter data of one time node: per simulated path, the coordinate average
/// of X_{t_i}, the network value and the exact value. Rows sorted by the
/// coordinate average.
struct FigureData {
    int step = 0;
    double t = 0.0;
    std::vector<double> xbar, approx, exact;
};

inline FigureData figure_export(const SchemeSolution& sol, int step, int count,
                                RngStream x0_rng, RngStream w_rng) {
    const int n = sol.grid.num_steps();
    if (step < 0 || step > n) throw std::invalid_argument("figure_export: node index out of range");
    if (count < 1) throw std::invalid_argument("figure_export: need at least one path");
    if (!sol.problem.exact) throw std::invalid_argument("figure_export requires an exact oracle");

    const ProblemSpec& p = sol.problem;
    Matrix x(count, p.d);
    p.sample_x0(x0_rng, x);
    EulerScratch ws;
    Matrix dw, next;
    for (int j = 0; j < step; ++j) {
        detail::fill_normal(w_rng, dw, count, p.d, std::sqrt(sol.grid.steps[static_cast<std::size_t>(j)]));
        euler_step(p, sol.grid.nodes[static_cast<std::size_t>(j)],
                   sol.grid.steps[static_cast<std::size_t>(j)], x, dw, next, ws, j);
        x.swap(next);
    }

    const Matrix approx = evaluate_solution(sol, step, x);
    const Matrix exact =
        exact_solution(p, sol.grid.nodes[static_cast<std::size_t>(step)], x,
                       tail_increment(sol.b, step));

    std::vector<long> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0L);
    Vector xbar = x.rowwise().mean();
    std::sort(order.begin(), order.end(), [&](long a, long c) { return xbar(a) < xbar(c); });

    FigureData data;
    data.step = step;
    data.t = sol.grid.nodes[static_cast<std::size_t>(step)];
    data.xbar.reserve(static_cast<std::size_t>(count));
    for (long idx : order) {
        data.xbar.push_back(xbar(idx));
        data.approx.push_back(approx(idx, 0));
        data.exact.push_back(exact(idx, 0));
    }
    return data;
}

}  // namespace spde
