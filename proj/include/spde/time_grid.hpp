#pragma once

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

namespace spde {

/// Partition 0 = t_0 < t_1 < ... < t_N = T of the time interval.
///
/// Invariants: steps[i] == nodes[i+1] - nodes[i] exactly, mesh == max step,
/// regularity == mesh / min step (declared 1 for the uniform constructor).
struct TimeGrid {
    std::vector<double> nodes;  // N+1 entries, nodes[0] == 0
    std::vector<double> steps;  // N entries
    double mesh = 0.0;
    double regularity = 1.0;

    int num_steps() const { return static_cast<int>(steps.size()); }
    double horizon() const { return nodes.back(); }

    /// Builds a grid from explicit nodes; validates shape and monotonicity.
    static TimeGrid from_nodes(std::vector<double> nodes) {
        if (nodes.size() < 2) throw std::invalid_argument("time grid needs at least two nodes");
        if (nodes.front() != 0.0) throw std::invalid_argument("time grid must start at 0");
        TimeGrid g;
        g.nodes = std::move(nodes);
        g.steps.resize(g.nodes.size() - 1);
        for (std::size_t i = 0; i + 1 < g.nodes.size(); ++i) {
            const double dt = g.nodes[i + 1] - g.nodes[i];
            if (!(dt > 0.0)) throw std::invalid_argument("time grid nodes must be strictly increasing");
            g.steps[i] = dt;
        }
        const auto [lo, hi] = std::minmax_element(g.steps.begin(), g.steps.end());
        g.mesh = *hi;
        g.regularity = *hi / *lo;
        return g;
    }
};

/// Uniform grid with nodes t_i = T*i/N. Endpoints are exact; the regularity
/// constant is 1 by construction.
inline TimeGrid make_uniform_grid(double horizon, int num_steps) {
    if (!(horizon > 0.0)) throw std::invalid_argument("time horizon must be positive");
    if (num_steps < 1) throw std::invalid_argument("number of time steps must be at least 1");
    std::vector<double> nodes(static_cast<std::size_t>(num_steps) + 1);
    for (int i = 0; i <= num_steps; ++i)
        nodes[static_cast<std::size_t>(i)] = horizon * static_cast<double>(i) / static_cast<double>(num_steps);
    TimeGrid g = TimeGrid::from_nodes(std::move(nodes));
    g.regularity = 1.0;
    return g;
}

}  // namespace spde
