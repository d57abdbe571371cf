#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "spde/rng.hpp"
#include "spde/tensor.hpp"

namespace spde {

/// Coefficient set of one backward problem:
///   forward state   dX = mu(t,X) dt + sigma(t,X) dW,
///   driver          f(t, x, y, z)      with z in the k x d scaled-gradient
///                                      coordinates z = (grad u) sigma,
///   noise term      g(t, x, y)         of extent k x l,
///   terminal map    h(x)               of extent k.
/// f and g may be null, meaning identically zero. The exact oracle, when
/// present, takes the tail increment B_T - B_t of the auxiliary path.
struct ProblemSpec {
    std::string name = "custom";
    int d = 1;
    int k = 1;
    int l = 1;
    double horizon = 1.0;

    std::function<void(double, const Matrix&, Matrix&)> drift;                  // out [B,d]
    std::function<void(double, const Matrix&, const Matrix&, Matrix&)> diffusion_apply;  // out = sigma*dw
    std::function<Matrix(double, const Vector&)> diffusion;                     // [d,d] at one state
    std::function<Tensor(double, const Matrix&, const Tensor&, const Tensor&)> f;  // [B,k]
    std::function<Tensor(double, const Matrix&, const Tensor&)> g;              // [B,k*l]
    std::function<Matrix(const Matrix&)> terminal;                              // [B,k]
    std::function<void(RngStream&, Matrix&)> sample_x0;                         // fills [B,d]
    std::function<Matrix(double, const Matrix&, const Vector&)> exact;          // [B,k]

    void validate() const {
        if (d < 1 || k < 1 || l < 1) throw std::invalid_argument("problem extents must be positive");
        if (!(horizon > 0.0)) throw std::invalid_argument("problem horizon must be positive");
        if (!drift) throw std::invalid_argument("problem is missing the drift coefficient");
        if (!diffusion_apply) throw std::invalid_argument("problem is missing the diffusion coefficient");
        if (!terminal) throw std::invalid_argument("problem is missing the terminal condition");
        if (!sample_x0) throw std::invalid_argument("problem is missing the initial sampler");
    }
};

/// Evaluates the exact oracle, guarding the time argument.
inline Matrix exact_solution(const ProblemSpec& p, double t, const Matrix& x, const Vector& b_tail) {
    if (!p.exact) throw std::invalid_argument("problem '" + p.name + "' has no exact oracle");
    if (t < 0.0 || t > p.horizon)
        throw std::invalid_argument("exact_solution: time outside [0, horizon]");
    if (b_tail.size() != p.l)
        throw std::invalid_argument("exact_solution: tail increment extent differs from l");
    return p.exact(t, x, b_tail);
}

/// The d-dimensional benchmark family (k = l = 1, horizon 1):
///   mu_j   = sbar sqrt(d) sin(x_j),          sigma = sbar sqrt(d) I,
///   f      = -(1/sqrt(d)) sum_j sin(x_j) z_j,
///   g      = -sbar sqrt(d) sin^2(y / sqrt(d)),
///   h(x)   = sqrt(d) atan(mean_j x_j) + (pi/2) sqrt(d),
///   X_0    ~ U(-0.2, 0.2)^d,
/// with sbar = 0.25. Closed form: u(t, X_t) = sqrt(d) atan(mean_j (X_t)_j
/// - sbar (B_T - B_t)) + (pi/2) sqrt(d).
inline ProblemSpec benchmark_problem(int d) {
    if (d < 1) throw std::invalid_argument("benchmark dimension must be positive");
    ProblemSpec p;
    p.name = "benchmark";
    p.d = d;
    p.k = 1;
    p.l = 1;
    p.horizon = 1.0;

    const double sbar = 0.25;
    const double sqd = std::sqrt(static_cast<double>(d));
    const double sig = sbar * sqd;
    const double halfpi = 2.0 * std::atan(1.0);

    p.drift = [sig](double, const Matrix& x, Matrix& out) {
        out = sig * x.array().sin().matrix();
    };
    p.diffusion_apply = [sig](double, const Matrix&, const Matrix& dw, Matrix& out) {
        out = sig * dw;
    };
    p.diffusion = [sig, d](double, const Vector&) {
        return Matrix(sig * Matrix::Identity(d, d));
    };
    p.f = [sqd](double, const Matrix& x, const Tensor&, const Tensor& z) {
        Matrix coef = (-1.0 / sqd) * x.array().sin().matrix();
        Tensor c = z.on_tape() ? constant(*z.tape, coef) : Tensor::detached(std::move(coef));
        return rowdot(c, z);
    };
    p.g = [sig, sqd](double, const Matrix&, const Tensor& y) {
        return scale(square(spde::sin(scale(y, 1.0 / sqd))), -sig);
    };

    auto kernel = [sqd, halfpi](const Matrix& x, double shift) {
        Matrix m = x.rowwise().mean();
        return Matrix((sqd * (m.array() - shift).atan() + halfpi * sqd).matrix());
    };
    p.terminal = [kernel](const Matrix& x) { return kernel(x, 0.0); };
    p.exact = [kernel, sbar](double, const Matrix& x, const Vector& b_tail) {
        return kernel(x, sbar * b_tail(0));
    };

    p.sample_x0 = [](RngStream& rng, Matrix& out) {
        for (long r = 0; r < out.rows(); ++r)
            for (long c = 0; c < out.cols(); ++c) out(r, c) = rng.uniform(-0.2, 0.2);
    };
    return p;
}

}  // namespace spde
