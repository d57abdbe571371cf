#pragma once

#include <Eigen/QR>

#include <utility>
#include <vector>

#include "spde/errors.hpp"
#include "spde/paths.hpp"
#include "spde/problem.hpp"
#include "spde/scheme.hpp"
#include "spde/time_grid.hpp"

namespace spde {

/// Settings of the least-squares corrector. Intended for low dimension: the
/// polynomial basis has C(d+degree, degree) columns.
struct RegressionConfig {
    int basis_degree = 5;
    int sample_count = 100000;
    int picard_iterations = 1;

    void validate() const {
        if (basis_degree < 0) throw std::invalid_argument("basis degree must be non-negative");
        if (sample_count < 2) throw std::invalid_argument("sample count must be at least 2");
        if (picard_iterations < 0) throw std::invalid_argument("picard iterations must be non-negative");
    }
};

namespace detail {

/// Exponent tuples of all monomials in d variables with total degree <= deg,
/// in graded lexicographic order starting from the constant.
inline std::vector<std::vector<int>> monomial_exponents(int d, int deg) {
    std::vector<std::vector<int>> out;
    std::vector<int> tmp(static_cast<std::size_t>(d), 0);
    auto fill = [&](auto&& self, int var, int remaining) -> void {
        if (var == d - 1) {
            tmp[static_cast<std::size_t>(var)] = remaining;
            out.push_back(tmp);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            tmp[static_cast<std::size_t>(var)] = e;
            self(self, var + 1, remaining - e);
        }
    };
    for (int total = 0; total <= deg; ++total) fill(fill, 0, total);
    return out;
}

inline void eval_monomials(const Matrix& x, const std::vector<std::vector<int>>& expo,
                           Matrix& out) {
    out.resize(x.rows(), static_cast<long>(expo.size()));
    for (std::size_t j = 0; j < expo.size(); ++j) {
        out.col(static_cast<long>(j)).setOnes();
        for (std::size_t v = 0; v < expo[j].size(); ++v)
            for (int e = 0; e < expo[j][v]; ++e)
                out.col(static_cast<long>(j)) =
                    out.col(static_cast<long>(j)).cwiseProduct(x.col(static_cast<long>(v)));
    }
}

}  // namespace detail

/// Backward sweep solved by conditional-expectation regression instead of
/// network training. Stores per-step basis coefficients for the value
/// (projection of psi) and the corrector gradient.
struct RegressionSolution {
    ProblemSpec problem;
    TimeGrid grid;
    Matrix b;  // [N,l]
    RegressionConfig config;
    std::vector<std::vector<int>> exponents;
    std::vector<Matrix> u_coef;  // per step, [basis, k]
    std::vector<Matrix> z_coef;  // per step, [basis, k*d]
};

/// Value approximation at node i, including the driver correction with the
/// configured number of Picard passes; node N is the exact terminal map.
inline Matrix evaluate_regression(const RegressionSolution& sol, int i, const Matrix& x) {
    const int n = sol.grid.num_steps();
    if (i < 0 || i > n) throw std::invalid_argument("evaluate_regression: node index out of range");
    if (i == n) return sol.problem.terminal(x);
    Matrix phi;
    detail::eval_monomials(x, sol.exponents, phi);
    const Matrix y0 = phi * sol.u_coef[static_cast<std::size_t>(i)];
    if (!sol.problem.f || sol.config.picard_iterations == 0) return y0;
    const Matrix z = phi * sol.z_coef[static_cast<std::size_t>(i)];
    const double t_i = sol.grid.nodes[static_cast<std::size_t>(i)];
    const double dt = sol.grid.steps[static_cast<std::size_t>(i)];
    Matrix y = y0;
    for (int pass = 0; pass < sol.config.picard_iterations; ++pass) {
        Matrix f_val = sol.problem
                           .f(t_i, x, Tensor::detached(Matrix(y)), Tensor::detached(Matrix(z)))
                           .value();
        y = y0 + dt * f_val;
    }
    return y;
}

/// Least-squares corrector over one bundle of forward paths:
///   z_i ~ E[psi_i dW_i | X_i] / dt_i   (projection coefficients),
///   y_i = E[psi_i | X_i] + f(t_i, x, y_prev, z_i) dt_i  (Picard in y),
/// iterated backward with the same predictor as the network route. Raises a
/// numeric error if the regression design loses rank.
inline RegressionSolution regression_corrector_solve(const ProblemSpec& p, const TimeGrid& grid,
                                                     Matrix b, const RegressionConfig& cfg,
                                                     RngStream x0_rng, RngStream w_rng) {
    p.validate();
    cfg.validate();
    if (p.d > 2)
        throw std::invalid_argument(
            "regression_corrector_solve: the polynomial corrector supports d <= 2 only");
    const int n = grid.num_steps();
    if (b.rows() != n || b.cols() != p.l)
        throw std::invalid_argument("regression_corrector_solve: auxiliary path extents do not match");

    RegressionSolution sol;
    sol.problem = p;
    sol.grid = grid;
    sol.b = std::move(b);
    sol.config = cfg;
    sol.exponents = detail::monomial_exponents(p.d, cfg.basis_degree);
    sol.u_coef.resize(static_cast<std::size_t>(n));
    sol.z_coef.resize(static_cast<std::size_t>(n));

    const long nb = static_cast<long>(sol.exponents.size());
    PathBundle bundle = make_path_bundle(p, grid, cfg.sample_count, x0_rng, w_rng, sol.b);

    Matrix y = p.terminal(bundle.state(n));
    Matrix phi, psi, rhs;
    for (int i = n - 1; i >= 0; --i) {
        const auto si = static_cast<std::size_t>(i);
        const double t_i = grid.nodes[si];
        const double t_next = grid.nodes[si + 1];
        const double dt = grid.steps[si];
        const Matrix x_i = bundle.state(i);
        const Matrix dw = bundle.increment(i);

        if (p.g) {
            Matrix g_val = p.g(t_next, bundle.state(i + 1), Tensor::detached(Matrix(y))).value();
            psi = predictor(y, g_val, sol.b.row(i).transpose());
        } else {
            psi = y;
        }

        detail::eval_monomials(x_i, sol.exponents, phi);
        rhs.resize(psi.rows(), static_cast<long>(p.k) + static_cast<long>(p.k) * p.d);
        rhs.leftCols(p.k) = psi;
        for (int q = 0; q < p.k; ++q)
            for (int j = 0; j < p.d; ++j)
                rhs.col(p.k + static_cast<long>(q) * p.d + j) =
                    psi.col(q).cwiseProduct(dw.col(j)) / dt;

        Eigen::ColPivHouseholderQR<Matrix> qr(phi);
        if (qr.rank() < nb)
            throw NumericError(
                "regression design is rank deficient; increase the sample count or lower the "
                "basis degree",
                i);
        Matrix coef = qr.solve(rhs);
        sol.u_coef[si] = coef.leftCols(p.k);
        sol.z_coef[si] = coef.rightCols(static_cast<long>(p.k) * p.d);

        // value update at the sample points, with the same Picard rule used
        // at evaluation time
        const Matrix y0 = phi * sol.u_coef[si];
        if (p.f && cfg.picard_iterations > 0) {
            const Matrix z = phi * sol.z_coef[si];
            y = y0;
            for (int pass = 0; pass < cfg.picard_iterations; ++pass) {
                Matrix f_val =
                    p.f(t_i, x_i, Tensor::detached(Matrix(y)), Tensor::detached(Matrix(z))).value();
                y = y0 + dt * f_val;
            }
        } else {
            y = y0;
        }
        if (!y.allFinite())
            throw NumericError("regression corrector produced non-finite values at step " +
                                   std::to_string(i),
                               i);
    }
    return sol;
}

}  // namespace spde
