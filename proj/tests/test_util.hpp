// Shared helpers: finite-difference gradient oracle, scratch problems, and a
// tolerant matrix comparison for doctest.
#pragma once

#include <spde/spde.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace testutil {

/// Central finite differences of a scalar functional with respect to one
/// matrix, perturbing the matrix in place.
inline spde::Matrix fd_gradient(const std::function<double()>& f, spde::Matrix& param,
                                double h = 1e-6) {
    spde::Matrix grad(param.rows(), param.cols());
    for (long r = 0; r < param.rows(); ++r)
        for (long c = 0; c < param.cols(); ++c) {
            const double saved = param(r, c);
            param(r, c) = saved + h;
            const double up = f();
            param(r, c) = saved - h;
            const double down = f();
            param(r, c) = saved;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    return grad;
}

/// Worst relative disagreement between an analytic gradient and its
/// finite-difference estimate, restricted to entries with |analytic| above
/// the magnitude floor.
inline double max_rel_error(const spde::Matrix& analytic, const spde::Matrix& fd,
                            double floor_mag = 1e-8) {
    double worst = 0.0;
    for (long r = 0; r < analytic.rows(); ++r)
        for (long c = 0; c < analytic.cols(); ++c) {
            if (std::abs(analytic(r, c)) <= floor_mag) continue;
            const double rel = std::abs(analytic(r, c) - fd(r, c)) / std::abs(analytic(r, c));
            worst = std::max(worst, rel);
        }
    return worst;
}

/// Normwise relative disagreement ||analytic - fd|| / ||fd||. Entrywise
/// ratios are ill-conditioned when an entry's true magnitude sits at the
/// central-difference noise floor (~1e-9 for unit-scale functionals at
/// h = 1e-6); the Frobenius norm keeps the comparison scaled by the whole
/// gradient instead.
inline double normwise_rel_error(const spde::Matrix& analytic, const spde::Matrix& fd) {
    return (analytic - fd).norm() / std::max(fd.norm(), 1e-12);
}

inline double max_abs_diff(const spde::Matrix& a, const spde::Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

inline bool bit_equal(const spde::Matrix& a, const spde::Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (long r = 0; r < a.rows(); ++r)
        for (long c = 0; c < a.cols(); ++c)
            if (a(r, c) != b(r, c)) return false;
    return true;
}

/// Driftless unit-diffusion problem with linear terminal value and no driver:
/// u(t, x) = sum_j x_j exactly, so the scheme's only error is statistical.
inline spde::ProblemSpec linear_martingale_problem(int d) {
    spde::ProblemSpec p;
    p.name = "linear-martingale";
    p.d = d;
    p.k = 1;
    p.l = 1;
    p.horizon = 1.0;
    p.drift = [](double, const spde::Matrix& x, spde::Matrix& out) {
        out.setZero(x.rows(), x.cols());
    };
    p.diffusion_apply = [](double, const spde::Matrix&, const spde::Matrix& dw, spde::Matrix& out) {
        out = dw;
    };
    p.diffusion = [d](double, const spde::Vector&) {
        return spde::Matrix(spde::Matrix::Identity(d, d));
    };
    p.terminal = [](const spde::Matrix& x) { return spde::Matrix(x.rowwise().sum()); };
    p.sample_x0 = [](spde::RngStream& rng, spde::Matrix& out) {
        for (long r = 0; r < out.rows(); ++r)
            for (long c = 0; c < out.cols(); ++c) out(r, c) = rng.uniform(-0.2, 0.2);
    };
    p.exact = [](double, const spde::Matrix& x, const spde::Vector&) {
        return spde::Matrix(x.rowwise().sum());
    };
    return p;
}

/// Constant-terminal problem: h = c with zero dynamics removed (benchmark-like
/// drift keeps paths moving, the value stays c everywhere).
inline spde::ProblemSpec constant_problem(int d, double c) {
    spde::ProblemSpec p = linear_martingale_problem(d);
    p.name = "constant";
    p.terminal = [c](const spde::Matrix& x) {
        return spde::Matrix(spde::Matrix::Constant(x.rows(), 1, c));
    };
    p.exact = [c](double, const spde::Matrix& x, const spde::Vector&) {
        return spde::Matrix(spde::Matrix::Constant(x.rows(), 1, c));
    };
    return p;
}

/// Small training budget for structural tests that do not assert accuracy.
inline spde::TrainConfig tiny_train_config() {
    spde::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.iterations_per_epoch = 3;
    cfg.hidden_width = 6;
    cfg.eval_samples = 64;
    return cfg;
}

}  // namespace testutil
