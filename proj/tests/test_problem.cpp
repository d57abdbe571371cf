#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <spde/problem.hpp>

#include "test_util.hpp"

using spde::Matrix;
using spde::Tensor;
using spde::Vector;

namespace {

Matrix random_box(spde::RngStream& rng, long rows, long cols, double half_width) {
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = rng.uniform(-half_width, half_width);
    return m;
}

constexpr double kHalfPi = 1.5707963267948966;

}  // namespace

TEST_SUITE("problem") {

TEST_CASE("benchmark terminal condition anchors") {
    auto p1 = spde::benchmark_problem(1);
    Matrix zero1 = Matrix::Zero(1, 1);
    CHECK(p1.terminal(zero1)(0, 0) == doctest::Approx(kHalfPi).epsilon(1e-15));

    auto p100 = spde::benchmark_problem(100);
    Matrix zero100 = Matrix::Zero(1, 100);
    CHECK(p100.terminal(zero100)(0, 0) == doctest::Approx(10.0 * kHalfPi).epsilon(1e-15));
    CHECK(p100.d == 100);
    CHECK(p100.k == 1);
    CHECK(p100.l == 1);
    CHECK(p100.horizon == 1.0);
}

TEST_CASE("driver f in z-coordinates") {
    auto p = spde::benchmark_problem(1);
    Matrix x(1, 1), y(1, 1), z(1, 1);
    x << kHalfPi;
    y << 0.7;  // f does not depend on y for the benchmark
    z << 0.5;
    Tensor fv = p.f(0.3, x, Tensor::detached(y), Tensor::detached(z));
    CHECK(fv.value()(0, 0) == doctest::Approx(-0.5).epsilon(1e-15));

    // x = 0 kills the driver regardless of z.
    x << 0.0;
    z << 123.0;
    CHECK(p.f(0.0, x, Tensor::detached(y), Tensor::detached(z)).value()(0, 0) == 0.0);
}

TEST_CASE("f conversion from gradient form to z-coordinates") {
    // With z = sigma-bar sqrt(d) v, the z-form must equal -sigma-bar sum_j sin(x_j) v_j.
    spde::RngStream rng(19, spde::Stream::W);
    for (int d : {1, 3, 7}) {
        auto p = spde::benchmark_problem(d);
        const double sig = 0.25 * std::sqrt(static_cast<double>(d));
        const Matrix x = random_box(rng, 5, d, 1.0);
        const Matrix v = random_box(rng, 5, d, 2.0);
        const Matrix y = random_box(rng, 5, 1, 1.0);
        Tensor fv = p.f(0.5, x, Tensor::detached(y), Tensor::detached(Matrix(sig * v)));
        for (long r = 0; r < 5; ++r) {
            double expect = 0.0;
            for (int j = 0; j < d; ++j) expect -= 0.25 * std::sin(x(r, j)) * v(r, j);
            CHECK(fv.value()(r, 0) == doctest::Approx(expect).epsilon(1e-13));
        }
    }
}

TEST_CASE("noise coefficient g") {
    auto p = spde::benchmark_problem(1);
    Matrix x = Matrix::Zero(2, 1);
    Matrix y(2, 1);
    y << kHalfPi, 0.0;
    Tensor gv = p.g(0.1, x, Tensor::detached(y));
    CHECK(gv.value().rows() == 2);
    CHECK(gv.value().cols() == 1);  // k*l = 1
    CHECK(gv.value()(0, 0) == doctest::Approx(-0.25).epsilon(1e-14));  // -0.25 sin^2(pi/2)
    CHECK(gv.value()(1, 0) == 0.0);

    // d = 4: g = -0.5 sin^2(y / 2).
    auto p4 = spde::benchmark_problem(4);
    Matrix x4 = Matrix::Zero(1, 4);
    Matrix y4(1, 1);
    y4 << 1.0;
    const double expect = -0.5 * std::sin(0.5) * std::sin(0.5);
    CHECK(p4.g(0.0, x4, Tensor::detached(y4)).value()(0, 0) ==
          doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("exact solution matches the terminal condition at t = T") {
    spde::RngStream rng(23, spde::Stream::W);
    for (int d : {1, 5}) {
        auto p = spde::benchmark_problem(d);
        const Matrix x = random_box(rng, 10000, d, 1.0);
        Vector zero_tail = Vector::Zero(1);
        Matrix ex = p.exact(p.horizon, x, zero_tail);
        Matrix h = p.terminal(x);
        CHECK(testutil::max_abs_diff(ex, h) == 0.0);
    }
}

TEST_CASE("exact solution closed form round-trips through its inverse") {
    // Invert the closed form for the tail increment that produces 1.596926235
    // at (t=0, x=0), then evaluate forward again.
    auto p = spde::benchmark_problem(1);
    const double target = 1.596926235;
    const double b_tail = -4.0 * std::tan(target - kHalfPi);
    Matrix x = Matrix::Zero(1, 1);
    Vector tail(1);
    tail << b_tail;
    Matrix u = spde::exact_solution(p, 0.0, x, tail);
    CHECK(u(0, 0) == doctest::Approx(target).epsilon(1e-12));

    // d=100 at zero tail: 10 * pi / 2.
    auto p100 = spde::benchmark_problem(100);
    Matrix x100 = Matrix::Zero(1, 100);
    Vector zero_tail = Vector::Zero(1);
    CHECK(spde::exact_solution(p100, 0.0, x100, zero_tail)(0, 0) ==
          doctest::Approx(10.0 * kHalfPi).epsilon(1e-12));
}

TEST_CASE("exact solution guards") {
    auto p = spde::benchmark_problem(1);
    Matrix x = Matrix::Zero(1, 1);
    Vector tail = Vector::Zero(1);
    CHECK_THROWS_AS((void)spde::exact_solution(p, -0.1, x, tail), std::invalid_argument);
    CHECK_THROWS_AS((void)spde::exact_solution(p, 1.1, x, tail), std::invalid_argument);
    Vector wide = Vector::Zero(2);
    CHECK_THROWS_AS((void)spde::exact_solution(p, 0.5, x, wide), std::invalid_argument);

    spde::ProblemSpec no_oracle = testutil::linear_martingale_problem(1);
    no_oracle.exact = nullptr;
    CHECK_THROWS_AS((void)spde::exact_solution(no_oracle, 0.5, x, tail),
                    std::invalid_argument);
}

TEST_CASE("drift is permutation equivariant and diffusion is isotropic") {
    spde::RngStream rng(29, spde::Stream::W);
    const int d = 6;
    auto p = spde::benchmark_problem(d);
    const Matrix x = random_box(rng, 4, d, 1.0);

    std::vector<int> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = d - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<int>(rng.uniform01() * (i + 1))]);

    Matrix xp(4, d);
    for (int j = 0; j < d; ++j) xp.col(j) = x.col(perm[j]);

    Matrix mu, mup;
    p.drift(0.4, x, mu);
    p.drift(0.4, xp, mup);
    for (int j = 0; j < d; ++j)
        CHECK(testutil::max_abs_diff(Matrix(mup.col(j)), Matrix(mu.col(perm[j]))) == 0.0);

    // Diffusion matrix is sigma-bar sqrt(d) times the identity, state independent.
    Vector xv = Vector::Constant(d, 0.37);
    Matrix sig = p.diffusion(0.2, xv);
    const double c = 0.25 * std::sqrt(static_cast<double>(d));
    CHECK(sig.rows() == d);
    CHECK(sig.cols() == d);
    for (int r = 0; r < d; ++r)
        for (int cidx = 0; cidx < d; ++cidx)
            CHECK(sig(r, cidx) == (r == cidx ? c : 0.0));

    // diffusion_apply agrees with explicit multiplication by the matrix.
    const Matrix dw = random_box(rng, 4, d, 0.5);
    Matrix applied;
    p.diffusion_apply(0.2, x, dw, applied);
    CHECK(testutil::max_abs_diff(applied, Matrix(dw * sig.transpose())) < 1e-14);
}

TEST_CASE("drift magnitude follows the dimension scaling") {
    auto p9 = spde::benchmark_problem(9);
    Matrix x = Matrix::Constant(1, 9, kHalfPi);
    Matrix mu;
    p9.drift(0.0, x, mu);
    // 0.25 * sqrt(9) * sin(pi/2) = 0.75 componentwise.
    for (int j = 0; j < 9; ++j) CHECK(mu(0, j) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("initial sampler stays inside the box with the right moments") {
    auto p = spde::benchmark_problem(2);
    spde::RngStream rng(7, spde::Stream::Shuffle);
    Matrix x0(50000, 2);
    p.sample_x0(rng, x0);
    CHECK(x0.minCoeff() > -0.2);
    CHECK(x0.maxCoeff() < 0.2);
    const double n = static_cast<double>(x0.size());
    const double mean = x0.sum() / n;
    const double var = (x0.array() - mean).square().sum() / (n - 1.0);
    const double target_var = 0.16 / 12.0;
    CHECK(std::abs(mean) < 4.0 * std::sqrt(target_var / n));
    CHECK(std::abs(var - target_var) < 0.02 * target_var);
}

TEST_CASE("coefficient slopes stay bounded on the unit box") {
    // Regression tripwire, not a proof: difference quotients of h, g and f stay
    // below 10 sqrt(d) on [-1,1]^d.
    spde::RngStream rng(31, spde::Stream::W);
    for (int d : {1, 4}) {
        auto p = spde::benchmark_problem(d);
        const double bound = 10.0 * std::sqrt(static_cast<double>(d));
        for (int trial = 0; trial < 200; ++trial) {
            const Matrix x1 = random_box(rng, 1, d, 1.0);
            const Matrix x2 = random_box(rng, 1, d, 1.0);
            const double dx = (x1 - x2).norm();
            if (dx < 1e-9) continue;

            const double dh = std::abs(p.terminal(x1)(0, 0) - p.terminal(x2)(0, 0));
            CHECK(dh / dx <= bound);

            Matrix y1 = random_box(rng, 1, 1, 1.0), y2 = random_box(rng, 1, 1, 1.0);
            if (std::abs(y1(0, 0) - y2(0, 0)) > 1e-9) {
                const double dg = std::abs(p.g(0.0, x1, Tensor::detached(y1)).value()(0, 0) -
                                           p.g(0.0, x1, Tensor::detached(y2)).value()(0, 0));
                CHECK(dg / std::abs(y1(0, 0) - y2(0, 0)) <= bound);
            }

            Matrix z1 = random_box(rng, 1, d, 1.0), z2 = random_box(rng, 1, d, 1.0);
            const double dz = (z1 - z2).norm();
            if (dz > 1e-9) {
                const double df =
                    std::abs(p.f(0.0, x1, Tensor::detached(y1), Tensor::detached(z1)).value()(0, 0) -
                             p.f(0.0, x1, Tensor::detached(y1), Tensor::detached(z2)).value()(0, 0));
                CHECK(df / dz <= bound);
            }
        }
    }
}

TEST_CASE("construction and validation errors") {
    CHECK_THROWS_AS((void)spde::benchmark_problem(0), std::invalid_argument);
    CHECK_THROWS_AS((void)spde::benchmark_problem(-3), std::invalid_argument);

    spde::ProblemSpec p = testutil::linear_martingale_problem(2);
    CHECK_NOTHROW(p.validate());
    p.d = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.d = 2;
    p.horizon = 0.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.horizon = 1.0;
    p.drift = nullptr;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

}  // TEST_SUITE
