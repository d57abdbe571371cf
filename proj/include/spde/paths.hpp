#pragma once

#include <string>

#include "spde/errors.hpp"
#include "spde/problem.hpp"
#include "spde/rng.hpp"
#include "spde/time_grid.hpp"

namespace spde {

/// Gaussian grid increments: entry [r, i*dim + m] ~ N(0, dt_i), drawn path by
/// path, step by step, component by component.
inline Matrix sample_increments(const TimeGrid& grid, int dim, int count, RngStream& rng) {
    if (dim < 1 || count < 1) throw std::invalid_argument("sample_increments: extents must be positive");
    const int n = grid.num_steps();
    Matrix out(count, static_cast<long>(n) * dim);
    for (int r = 0; r < count; ++r)
        for (int i = 0; i < n; ++i) {
            const double sd = std::sqrt(grid.steps[static_cast<std::size_t>(i)]);
            for (int m = 0; m < dim; ++m) out(r, static_cast<long>(i) * dim + m) = sd * rng.normal();
        }
    return out;
}

/// One realization of an l-dimensional increment sequence, as an [N, l] matrix.
inline Matrix sample_noise_path(const TimeGrid& grid, int l, RngStream& rng) {
    if (l < 1) throw std::invalid_argument("sample_noise_path: extent must be positive");
    const int n = grid.num_steps();
    Matrix out(n, l);
    for (int i = 0; i < n; ++i) {
        const double sd = std::sqrt(grid.steps[static_cast<std::size_t>(i)]);
        for (int m = 0; m < l; ++m) out(i, m) = sd * rng.normal();
    }
    return out;
}

/// Sum of increments from step `from` to the end: B_T - B_{t_from}.
inline Vector tail_increment(const Matrix& b, int from) {
    const long n = b.rows();
    if (from < 0 || from > n) throw std::invalid_argument("tail_increment: step out of range");
    if (from == n) return Vector::Zero(b.cols());
    return b.bottomRows(n - from).colwise().sum().transpose();
}

/// Reusable buffers for the Euler update.
struct EulerScratch {
    Matrix mu, sig;
};

/// One explicit Euler update for a batch of rows:
///   out = x + mu(t, x) dt + sigma(t, x) dw.
/// Aliasing out with x is allowed. Non-finite results raise a numeric error
/// carrying the step index.
inline void euler_step(const ProblemSpec& p, double t, double dt, const Matrix& x,
                       const Matrix& dw, Matrix& out, EulerScratch& ws, int step_index) {
    p.drift(t, x, ws.mu);
    p.diffusion_apply(t, x, dw, ws.sig);
    out = x + dt * ws.mu + ws.sig;
    if (!out.allFinite())
        throw NumericError("forward simulation produced non-finite states at step " +
                               std::to_string(step_index),
                           step_index);
}

/// Explicit Euler paths over the whole grid. Returns [count, (N+1)*d] with
/// column block i holding the states at t_i; block 0 repeats x0.
inline Matrix simulate_forward(const ProblemSpec& p, const TimeGrid& grid, const Matrix& x0,
                               const Matrix& w) {
    const int n = grid.num_steps();
    const int d = p.d;
    if (x0.cols() != d) throw std::invalid_argument("simulate_forward: x0 width differs from d");
    if (w.rows() != x0.rows() || w.cols() != static_cast<long>(n) * d)
        throw std::invalid_argument("simulate_forward: increment extents do not match grid");
    Matrix paths(x0.rows(), static_cast<long>(n + 1) * d);
    paths.leftCols(d) = x0;
    EulerScratch ws;
    Matrix next;
    for (int i = 0; i < n; ++i) {
        euler_step(p, grid.nodes[static_cast<std::size_t>(i)], grid.steps[static_cast<std::size_t>(i)],
                   paths.middleCols(static_cast<long>(i) * d, d),
                   w.middleCols(static_cast<long>(i) * d, d), next, ws, i);
        paths.middleCols(static_cast<long>(i + 1) * d, d) = next;
    }
    return paths;
}

/// Simulated forward paths together with the noise realizations that produced
/// them and the auxiliary path of the backward equation.
struct PathBundle {
    TimeGrid grid;
    int d = 0;
    int l = 0;
    Matrix x;  // [count, (N+1)*d]
    Matrix w;  // [count, N*d]
    Matrix b;  // [N, l]

    long count() const { return x.rows(); }

    auto state(int i) const { return x.middleCols(static_cast<long>(i) * d, d); }
    auto increment(int i) const { return w.middleCols(static_cast<long>(i) * d, d); }
};

inline PathBundle make_path_bundle(const ProblemSpec& p, const TimeGrid& grid, int count,
                                   RngStream& x0_rng, RngStream& w_rng, Matrix b) {
    p.validate();
    if (b.rows() != grid.num_steps() || b.cols() != p.l)
        throw std::invalid_argument("make_path_bundle: auxiliary path extents do not match");
    PathBundle bundle;
    bundle.grid = grid;
    bundle.d = p.d;
    bundle.l = p.l;
    bundle.b = std::move(b);
    Matrix x0(count, p.d);
    p.sample_x0(x0_rng, x0);
    bundle.w = sample_increments(grid, p.d, count, w_rng);
    bundle.x = simulate_forward(p, grid, x0, bundle.w);
    return bundle;
}

}  // namespace spde
