#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spde/analysis.hpp"
#include "spde/regression.hpp"
#include "spde/scheme.hpp"

namespace spde {

using json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Complete description of one experiment. Serializes to a single JSON
/// document; every field is explicit on output, so a round trip through
/// to_json/parse is the identity.
struct ExperimentConfig {
    std::string problem_name = "benchmark";
    int d = 1;
    double horizon = 1.0;
    int n_steps = 32;
    TrainConfig training;
    std::uint64_t seed = 1;
    int n_bpaths = 5;
    int n_runs = 5;
    std::vector<double> x_eval;  // empty means the origin
    std::vector<int> convergence_steps = {8, 16, 32, 64};
    int convergence_bpaths = 20;
    std::string corrector = "regression";  // corrector of the convergence study
    RegressionConfig regression;
    std::string output_dir = "out";
    int workers = 1;

    void validate() const {
        if (problem_name != "benchmark")
            throw ConfigError("unknown problem '" + problem_name +
                              "'; only 'benchmark' can be configured by name");
        if (d < 1) throw ConfigError("problem.d must be at least 1");
        if (!(horizon > 0.0)) throw ConfigError("problem.horizon must be positive");
        if (n_steps < 1) throw ConfigError("grid.n_steps must be at least 1");
        if (n_bpaths < 1 || n_runs < 1)
            throw ConfigError("report.n_bpaths and report.n_runs must be at least 1");
        if (!x_eval.empty() && static_cast<int>(x_eval.size()) != d)
            throw ConfigError("report.x_eval must have exactly problem.d entries");
        if (corrector != "neural" && corrector != "regression")
            throw ConfigError("convergence.corrector must be 'neural' or 'regression'");
        if (workers < 1) throw ConfigError("workers must be at least 1");
        try {
            training.validate();
            regression.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }

    Vector x_eval_vector() const {
        if (x_eval.empty()) return Vector::Zero(d);
        Vector v(static_cast<long>(x_eval.size()));
        for (std::size_t i = 0; i < x_eval.size(); ++i) v(static_cast<long>(i)) = x_eval[i];
        return v;
    }
};

/// Benchmark defaults per dimension: N = 32 and width 11 for d = 1, otherwise
/// N = 16 with width d+10 below dimension 50 and d+50 from there on.
inline ExperimentConfig default_config(int d) {
    if (d < 1) throw ConfigError("problem.d must be at least 1");
    ExperimentConfig c;
    c.d = d;
    c.n_steps = (d == 1) ? 32 : 16;
    c.training.hidden_width = (d < 50) ? d + 10 : d + 50;
    return c;
}

namespace detail {

inline void check_keys(const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown config key '" + (path.empty() ? it.key() : path + "." + it.key()) + "'");
    }
}

inline std::string join_key(const std::string& path, const char* key) {
    return path.empty() ? std::string(key) : path + "." + key;
}

template <typename T>
T fetch(const json& obj, const std::string& path, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + join_key(path, key) + "' has the wrong type");
    }
}

template <typename T>
T require(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key))
        throw ConfigError("config is missing required field '" + join_key(path, key) + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + join_key(path, key) + "' has the wrong type");
    }
}

inline int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

}  // namespace detail

/// Parses a config document. problem.d and grid.n_steps are required; every
/// other field falls back to the per-dimension defaults. Unknown keys and type
/// mismatches are hard errors; parse errors carry the line number.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ":" + std::to_string(detail::line_of_byte(text, e.byte)) +
                          ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError(origin + ": config root must be a JSON object");
    detail::check_keys(root, "", {"problem", "grid", "architecture", "training", "report",
                                  "convergence", "seed", "output_dir", "workers"});

    if (!root.contains("problem") || !root.at("problem").is_object())
        throw ConfigError("config is missing required field 'problem'");
    const json& prob = root.at("problem");
    detail::check_keys(prob, "problem", {"name", "d", "horizon"});
    const int d = detail::require<int>(prob, "problem", "d");
    ExperimentConfig c = default_config(d);
    c.problem_name = detail::fetch<std::string>(prob, "problem", "name", c.problem_name);
    c.horizon = detail::fetch<double>(prob, "problem", "horizon", c.horizon);

    if (!root.contains("grid") || !root.at("grid").is_object())
        throw ConfigError("config is missing required field 'grid.n_steps'");
    const json& grid = root.at("grid");
    detail::check_keys(grid, "grid", {"n_steps"});
    c.n_steps = detail::require<int>(grid, "grid", "n_steps");

    if (root.contains("architecture")) {
        const json& arch = root.at("architecture");
        detail::check_keys(arch, "architecture", {"hidden_width", "hidden_depth"});
        c.training.hidden_width =
            detail::fetch<int>(arch, "architecture", "hidden_width", c.training.hidden_width);
        c.training.hidden_depth =
            detail::fetch<int>(arch, "architecture", "hidden_depth", c.training.hidden_depth);
    }
    if (root.contains("training")) {
        const json& tr = root.at("training");
        detail::check_keys(tr, "training",
                           {"batch_size", "epochs", "iterations_per_epoch", "initial_rate",
                            "patience", "warm_start", "eval_samples"});
        c.training.batch_size = detail::fetch<int>(tr, "training", "batch_size", c.training.batch_size);
        c.training.epochs = detail::fetch<int>(tr, "training", "epochs", c.training.epochs);
        c.training.iterations_per_epoch =
            detail::fetch<int>(tr, "training", "iterations_per_epoch", c.training.iterations_per_epoch);
        c.training.initial_rate =
            detail::fetch<double>(tr, "training", "initial_rate", c.training.initial_rate);
        c.training.patience = detail::fetch<int>(tr, "training", "patience", c.training.patience);
        c.training.warm_start = detail::fetch<bool>(tr, "training", "warm_start", c.training.warm_start);
        c.training.eval_samples =
            detail::fetch<int>(tr, "training", "eval_samples", c.training.eval_samples);
    }
    if (root.contains("report")) {
        const json& rep = root.at("report");
        detail::check_keys(rep, "report", {"n_bpaths", "n_runs", "x_eval"});
        c.n_bpaths = detail::fetch<int>(rep, "report", "n_bpaths", c.n_bpaths);
        c.n_runs = detail::fetch<int>(rep, "report", "n_runs", c.n_runs);
        c.x_eval = detail::fetch<std::vector<double>>(rep, "report", "x_eval", c.x_eval);
    }
    if (root.contains("convergence")) {
        const json& conv = root.at("convergence");
        detail::check_keys(conv, "convergence",
                           {"n_steps_list", "n_bpaths", "corrector", "regression"});
        c.convergence_steps =
            detail::fetch<std::vector<int>>(conv, "convergence", "n_steps_list", c.convergence_steps);
        c.convergence_bpaths = detail::fetch<int>(conv, "convergence", "n_bpaths", c.convergence_bpaths);
        c.corrector = detail::fetch<std::string>(conv, "convergence", "corrector", c.corrector);
        if (conv.contains("regression")) {
            const json& reg = conv.at("regression");
            detail::check_keys(reg, "convergence.regression",
                               {"basis_degree", "sample_count", "picard_iterations"});
            c.regression.basis_degree = detail::fetch<int>(reg, "convergence.regression",
                                                           "basis_degree", c.regression.basis_degree);
            c.regression.sample_count = detail::fetch<int>(reg, "convergence.regression",
                                                           "sample_count", c.regression.sample_count);
            c.regression.picard_iterations =
                detail::fetch<int>(reg, "convergence.regression", "picard_iterations",
                                   c.regression.picard_iterations);
        }
    }
    c.seed = detail::fetch<std::uint64_t>(root, "", "seed", c.seed);
    c.output_dir = detail::fetch<std::string>(root, "", "output_dir", c.output_dir);
    c.workers = detail::fetch<int>(root, "", "workers", c.workers);
    c.validate();
    return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

inline json config_to_json(const ExperimentConfig& c) {
    json root;
    root["problem"] = {{"name", c.problem_name}, {"d", c.d}, {"horizon", c.horizon}};
    root["grid"] = {{"n_steps", c.n_steps}};
    root["architecture"] = {{"hidden_width", c.training.hidden_width},
                            {"hidden_depth", c.training.hidden_depth}};
    root["training"] = {{"batch_size", c.training.batch_size},
                        {"epochs", c.training.epochs},
                        {"iterations_per_epoch", c.training.iterations_per_epoch},
                        {"initial_rate", c.training.initial_rate},
                        {"patience", c.training.patience},
                        {"warm_start", c.training.warm_start},
                        {"eval_samples", c.training.eval_samples}};
    std::vector<double> x_eval = c.x_eval;
    if (x_eval.empty()) x_eval.assign(static_cast<std::size_t>(c.d), 0.0);
    root["report"] = {{"n_bpaths", c.n_bpaths}, {"n_runs", c.n_runs}, {"x_eval", x_eval}};
    root["convergence"] = {{"n_steps_list", c.convergence_steps},
                           {"n_bpaths", c.convergence_bpaths},
                           {"corrector", c.corrector},
                           {"regression",
                            {{"basis_degree", c.regression.basis_degree},
                             {"sample_count", c.regression.sample_count},
                             {"picard_iterations", c.regression.picard_iterations}}}};
    root["seed"] = c.seed;
    root["output_dir"] = c.output_dir;
    root["workers"] = c.workers;
    return root;
}

/// FNV-1a 64 over the canonical serialized form. Output location and worker
/// count are excluded: neither changes any computed number, and the hash
/// fingerprints the experiment, not where or how fast it ran.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    json canon = config_to_json(c);
    canon.erase("output_dir");
    canon.erase("workers");
    const std::string s = canon.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Environment overrides: SPDE_SEED replaces the seed, SPDE_OUT the output
/// directory. Command-line flags take precedence over both.
inline void apply_env_overrides(ExperimentConfig& c) {
    if (const char* s = std::getenv("SPDE_SEED")) {
        const std::string text(s);
        // stoull would wrap a leading minus sign, so screen the alphabet first.
        if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("SPDE_SEED is not a valid unsigned integer");
        try {
            c.seed = std::stoull(text);
        } catch (const std::exception&) {
            throw ConfigError("SPDE_SEED is not a valid unsigned integer");
        }
    }
    if (const char* o = std::getenv("SPDE_OUT")) c.output_dir = o;
}

/// The problem family named by the config.
inline ProblemSpec make_problem(const ExperimentConfig& c) {
    if (c.problem_name != "benchmark")
        throw ConfigError("unknown problem '" + c.problem_name + "'");
    ProblemSpec p = benchmark_problem(c.d);
    p.horizon = c.horizon;
    return p;
}

}  // namespace spde
