#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "spde/analysis.hpp"
#include "spde/checkpoint.hpp"
#include "spde/config.hpp"

namespace spde {

namespace detail {

/// Shortest decimal form that parses back to the same double; the same
/// encoder the JSON writers use, so CSV and JSON agree byte for byte.
inline std::string num(double x) { return json(x).dump(); }

}  // namespace detail

/// Table layout, one row per noise path, then a closing footer row:
///   bpath,approx_mean,exact,std_dev,rel_error
///   ...
///   rel_l2,<value>,,,
/// Failed rows carry the FAILED marker in place of the numeric columns.
inline void write_report_csv(const std::filesystem::path& path, const RunReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file " + path.string());
    out << "bpath,approx_mean,exact,std_dev,rel_error\n";
    for (const auto& row : report.rows) {
        if (row.failed) {
            out << row.bpath << ",FAILED,FAILED,FAILED,FAILED\n";
            continue;
        }
        out << row.bpath << ',' << detail::num(row.mean) << ',' << detail::num(row.exact) << ','
            << detail::num(row.std_dev) << ',' << detail::num(row.rel_error) << '\n';
    }
    out << "rel_l2," << detail::num(report.relative_l2) << ",,,\n";
}

inline json report_to_json(const RunReport& report) {
    json j;
    j["problem"] = {{"name", report.problem_name},
                    {"d", report.d},
                    {"k", report.k},
                    {"l", report.l},
                    {"horizon", report.horizon}};
    j["grid"] = {{"n_steps", report.n_steps}, {"horizon", report.horizon}};
    j["training"] = {{"batch_size", report.config.batch_size},
                     {"epochs", report.config.epochs},
                     {"iterations_per_epoch", report.config.iterations_per_epoch},
                     {"initial_rate", report.config.initial_rate},
                     {"patience", report.config.patience},
                     {"hidden_width", report.config.hidden_width},
                     {"hidden_depth", report.config.hidden_depth},
                     {"warm_start", report.config.warm_start},
                     {"eval_samples", report.config.eval_samples}};
    j["seed"] = report.seed;
    j["n_bpaths"] = report.n_bpaths;
    j["n_runs"] = report.n_runs;
    std::vector<double> x_eval(static_cast<std::size_t>(report.x_eval.size()));
    for (long i = 0; i < report.x_eval.size(); ++i) x_eval[static_cast<std::size_t>(i)] = report.x_eval(i);
    j["x_eval"] = x_eval;
    json rows = json::array();
    for (const auto& row : report.rows) {
        json r;
        r["bpath"] = row.bpath;
        std::vector<double> bt(static_cast<std::size_t>(row.b_tail.size()));
        for (long i = 0; i < row.b_tail.size(); ++i) bt[static_cast<std::size_t>(i)] = row.b_tail(i);
        r["b_tail"] = bt;
        json salts = json::array();
        for (int run = 0; run < report.n_runs; ++run) salts.push_back(cell_salt(row.bpath, run));
        r["run_salts"] = salts;
        r["run_values"] = row.run_values;
        r["run_errors"] = row.run_errors;
        r["failed"] = row.failed;
        if (!row.failed) {
            r["approx_mean"] = row.mean;
            r["exact"] = row.exact;
            r["std_dev"] = row.std_dev;
            r["rel_error"] = row.rel_error;
            r["exact_near_zero"] = row.exact_near_zero;
        }
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    j["relative_l2"] = report.relative_l2;
    j["failed_cells"] = report.failed_cells;
    return j;
}

inline void write_report_json(const std::filesystem::path& path, const RunReport& report) {
    detail::write_json_file(path, report_to_json(report));
}

/// Column order fixed: n_steps,mesh,mse,std_error,failures.
inline void write_convergence_csv(const std::filesystem::path& path,
                                  const ConvergenceReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file " + path.string());
    out << "n_steps,mesh,mse,std_error,failures\n";
    for (const auto& pt : report.points)
        out << pt.n_steps << ',' << detail::num(pt.mesh) << ',' << detail::num(pt.mse) << ','
            << detail::num(pt.std_error) << ',' << pt.failures << '\n';
}

/// Column order fixed: t,xbar,approx,exact; rows sorted by xbar.
inline void write_figure_csv(const std::filesystem::path& path, const FigureData& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file " + path.string());
    out << "t,xbar,approx,exact\n";
    for (std::size_t i = 0; i < data.xbar.size(); ++i)
        out << detail::num(data.t) << ',' << detail::num(data.xbar[i]) << ','
            << detail::num(data.approx[i]) << ',' << detail::num(data.exact[i]) << '\n';
}

/// Column order fixed: path,step,t,x_1..x_d.
inline void write_paths_csv(const std::filesystem::path& path, const TimeGrid& grid,
                            const Matrix& paths, int d) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file " + path.string());
    out << "path,step,t";
    for (int j = 1; j <= d; ++j) out << ",x_" << j;
    out << '\n';
    const int n = grid.num_steps();
    for (long r = 0; r < paths.rows(); ++r)
        for (int i = 0; i <= n; ++i) {
            out << r << ',' << i << ',' << detail::num(grid.nodes[static_cast<std::size_t>(i)]);
            for (int j = 0; j < d; ++j)
                out << ',' << detail::num(paths(r, static_cast<long>(i) * d + j));
            out << '\n';
        }
}

/// Machine-readable event log: one JSON object per line, stable field order,
/// no timestamps (the log of a fixed config and seed is reproducible).
class JsonlLogger {
public:
    JsonlLogger() = default;

    explicit JsonlLogger(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write file " + path.string());
    }

    void write(const json& event) {
        if (out_.is_open()) out_ << event.dump() << '\n';
    }

    void flush() {
        if (out_.is_open()) out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace spde
