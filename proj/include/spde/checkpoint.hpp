#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spde/config.hpp"
#include "spde/network.hpp"
#include "spde/scheme.hpp"

namespace spde {

namespace detail {

inline json matrix_to_json(const Matrix& m) {
    if (!m.allFinite()) throw NumericError("refusing to checkpoint non-finite values");
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (long r = 0; r < m.rows(); ++r)
        for (long c = 0; c < m.cols(); ++c)
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const json& j) {
    const long rows = j.at("rows").get<long>();
    const long cols = j.at("cols").get<long>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<long>(data.size()) != rows * cols)
        throw std::invalid_argument("checkpoint matrix extents do not match payload");
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c)
            m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return m;
}

}  // namespace detail

/// Serializes every stored value of a network: trainable blocks and frozen
/// running statistics. Doubles survive the round trip bit-exactly.
inline json network_to_json(const FeedforwardNet& net) {
    json j;
    j["format"] = "spde-net-v1";
    j["sizes"] = net.sizes();
    j["batch_norm"] = net.batch_norm();
    j["leaky_slope"] = net.leaky_slope();
    j["bn_eps"] = net.bn_eps();
    j["bn_momentum"] = net.bn_momentum();
    json blocks;
    for (const auto& [name, value] : net.named_values())
        blocks[name] = detail::matrix_to_json(*value);
    j["blocks"] = blocks;
    if (net.batch_norm()) {
        json running;
        const auto& layers = net.bn_layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "bn" + std::to_string(i + 1);
            running[prefix + "_mean"] = detail::matrix_to_json(layers[i].run_mean);
            running[prefix + "_var"] = detail::matrix_to_json(layers[i].run_var);
        }
        j["running"] = running;
    }
    return j;
}

inline FeedforwardNet network_from_json(const json& j) {
    if (j.at("format").get<std::string>() != "spde-net-v1")
        throw std::invalid_argument("unsupported network checkpoint format");
    FeedforwardNet net(j.at("sizes").get<std::vector<int>>(), j.at("batch_norm").get<bool>(),
                       j.at("leaky_slope").get<double>(), j.at("bn_eps").get<double>(),
                       j.at("bn_momentum").get<double>());
    const json& blocks = j.at("blocks");
    for (auto& b : net.parameters()) {
        if (!blocks.contains(b.name))
            throw std::invalid_argument("checkpoint is missing block " + b.name);
        Matrix m = detail::matrix_from_json(blocks.at(b.name));
        const Matrix& cur = b.tensor->value();
        if (m.rows() != cur.rows() || m.cols() != cur.cols())
            throw std::invalid_argument("checkpoint block " + b.name + " has the wrong extent");
        b.tensor->raw() = std::move(m);
    }
    if (net.batch_norm()) {
        const json& running = j.at("running");
        auto& layers = net.bn_layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "bn" + std::to_string(i + 1);
            layers[i].run_mean = detail::matrix_from_json(running.at(prefix + "_mean"));
            layers[i].run_var = detail::matrix_from_json(running.at(prefix + "_var"));
        }
    }
    net.set_mode(NetMode::Inference);
    return net;
}

namespace detail {

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file " + path.string());
    out << j.dump(2) << '\n';
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open file " + path.string());
    json j;
    in >> j;
    return j;
}

inline std::string step_file_name(int step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%03d.json", step);
    return buf;
}

}  // namespace detail

/// Writes a solution directory: manifest.json plus one step_NNN.json per time
/// step holding the (U_i, V_i) pair.
inline void save_solution(const std::filesystem::path& dir, const SchemeSolution& sol,
                          const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "spde-solution-v1";
    manifest["problem"] = {{"name", sol.problem.name},
                           {"d", sol.problem.d},
                           {"k", sol.problem.k},
                           {"l", sol.problem.l},
                           {"horizon", sol.problem.horizon}};
    manifest["grid"] = {{"horizon", sol.grid.horizon()}, {"n_steps", sol.grid.num_steps()}};
    manifest["b_increments"] = detail::matrix_to_json(sol.b);
    manifest["training"] = {{"batch_size", cfg.batch_size},
                            {"epochs", cfg.epochs},
                            {"iterations_per_epoch", cfg.iterations_per_epoch},
                            {"initial_rate", cfg.initial_rate},
                            {"patience", cfg.patience},
                            {"hidden_width", cfg.hidden_width},
                            {"hidden_depth", cfg.hidden_depth},
                            {"warm_start", cfg.warm_start},
                            {"eval_samples", cfg.eval_samples}};
    manifest["step_losses"] = sol.step_losses;
    manifest["epoch_losses"] = sol.epoch_losses;
    detail::write_json_file(dir / "manifest.json", manifest);
    for (int i = 0; i < sol.grid.num_steps(); ++i) {
        json step;
        step["step"] = i;
        step["u"] = network_to_json(sol.nets[static_cast<std::size_t>(i)].u);
        step["v"] = network_to_json(sol.nets[static_cast<std::size_t>(i)].v);
        detail::write_json_file(dir / detail::step_file_name(i), step);
    }
}

/// Restores a solution directory written by save_solution. Only problems
/// constructible by name (the benchmark family) can be restored.
inline SchemeSolution load_solution(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw std::invalid_argument("missing solution manifest " + manifest_path.string());
    const json manifest = detail::read_json_file(manifest_path);
    if (manifest.at("format").get<std::string>() != "spde-solution-v1")
        throw std::invalid_argument("unsupported solution format");

    SchemeSolution sol;
    const json& prob = manifest.at("problem");
    if (prob.at("name").get<std::string>() != "benchmark")
        throw std::invalid_argument("only benchmark solutions can be restored by name");
    sol.problem = benchmark_problem(prob.at("d").get<int>());
    sol.problem.horizon = prob.at("horizon").get<double>();
    sol.grid = make_uniform_grid(manifest.at("grid").at("horizon").get<double>(),
                                 manifest.at("grid").at("n_steps").get<int>());
    sol.b = detail::matrix_from_json(manifest.at("b_increments"));
    sol.step_losses = manifest.at("step_losses").get<std::vector<double>>();
    sol.epoch_losses = manifest.at("epoch_losses").get<std::vector<std::vector<double>>>();
    const int n = sol.grid.num_steps();
    sol.nets.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto path = dir / detail::step_file_name(i);
        if (!std::filesystem::exists(path))
            throw std::invalid_argument("missing solution checkpoint " + path.string());
        const json step = detail::read_json_file(path);
        sol.nets[static_cast<std::size_t>(i)].u = network_from_json(step.at("u"));
        sol.nets[static_cast<std::size_t>(i)].v = network_from_json(step.at("v"));
    }
    return sol;
}

}  // namespace spde
