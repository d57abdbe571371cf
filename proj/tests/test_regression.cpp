#include <doctest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <spde/regression.hpp>

#include "test_util.hpp"

using spde::Matrix;
using spde::RegressionConfig;
using spde::Tensor;
using spde::Vector;

namespace {

Matrix linspace_column(double lo, double hi, int count) {
    Matrix m(count, 1);
    for (int i = 0; i < count; ++i)
        m(i, 0) = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
    return m;
}

/// d=1 Brownian motion with uniform initial condition and polynomial terminal.
spde::ProblemSpec brownian_problem(std::function<Matrix(const Matrix&)> terminal) {
    spde::ProblemSpec p = testutil::linear_martingale_problem(1);
    p.name = "brownian";
    p.terminal = std::move(terminal);
    p.exact = nullptr;
    return p;
}

}  // namespace

TEST_SUITE("regression") {

TEST_CASE("monomial exponent tables") {
    auto e1 = spde::detail::monomial_exponents(1, 3);
    REQUIRE(e1.size() == 4);
    for (int i = 0; i <= 3; ++i) CHECK(e1[static_cast<std::size_t>(i)] == std::vector<int>{i});

    auto e2 = spde::detail::monomial_exponents(2, 2);
    const std::vector<std::vector<int>> expect = {{0, 0}, {1, 0}, {0, 1},
                                                  {2, 0}, {1, 1}, {0, 2}};
    CHECK(e2 == expect);

    // Count: C(d + deg, d) monomials; degrees appear in non-decreasing blocks.
    auto e3 = spde::detail::monomial_exponents(3, 4);
    CHECK(e3.size() == 35);
    int prev_total = 0;
    for (const auto& t : e3) {
        const int total = std::accumulate(t.begin(), t.end(), 0);
        CHECK(total >= prev_total);
        CHECK(total <= 4);
        prev_total = total;
    }
    CHECK(e3.front() == std::vector<int>{0, 0, 0});
}

TEST_CASE("monomial evaluation") {
    Matrix x(1, 2);
    x << 2.0, 3.0;
    Matrix phi;
    spde::detail::eval_monomials(x, spde::detail::monomial_exponents(2, 2), phi);
    REQUIRE(phi.rows() == 1);
    REQUIRE(phi.cols() == 6);
    CHECK(phi(0, 0) == 1.0);
    CHECK(phi(0, 1) == 2.0);
    CHECK(phi(0, 2) == 3.0);
    CHECK(phi(0, 3) == 4.0);
    CHECK(phi(0, 4) == 6.0);
    CHECK(phi(0, 5) == 9.0);
}

TEST_CASE("config validation") {
    RegressionConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.basis_degree = 0;
    CHECK_NOTHROW(cfg.validate());
    cfg.basis_degree = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.basis_degree = 2;
    cfg.sample_count = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.sample_count = 100;
    cfg.picard_iterations = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("degree zero projects every step onto the batch mean") {
    auto p = testutil::linear_martingale_problem(1);
    auto grid = spde::make_uniform_grid(1.0, 2);
    RegressionConfig cfg;
    cfg.basis_degree = 0;
    cfg.sample_count = 4000;

    spde::StreamFactory fac(17);
    spde::RngStream x0a = fac.stream(spde::Stream::Shuffle);
    spde::RngStream wa = fac.stream(spde::Stream::W);
    auto sol = spde::regression_corrector_solve(p, grid, Matrix::Zero(2, 1), cfg, x0a, wa);

    // Replay the identical bundle and reduce by hand.
    spde::RngStream x0b = fac.stream(spde::Stream::Shuffle);
    spde::RngStream wb = fac.stream(spde::Stream::W);
    auto bundle = spde::make_path_bundle(p, grid, cfg.sample_count, x0b, wb, Matrix::Zero(2, 1));
    const double mean_terminal = p.terminal(bundle.state(2)).col(0).mean();

    CHECK(std::abs(sol.u_coef[1](0, 0) - mean_terminal) < 1e-10);
    // With no driver, the step-0 target is the constant step-1 fit itself.
    CHECK(std::abs(sol.u_coef[0](0, 0) - sol.u_coef[1](0, 0)) < 1e-10);

    Matrix xa(1, 1), xb2(1, 1);
    xa << -5.0;
    xb2 << 5.0;
    CHECK(spde::evaluate_regression(sol, 0, xa)(0, 0) ==
          spde::evaluate_regression(sol, 0, xb2)(0, 0));
}

TEST_CASE("polynomial terminal with Gaussian transitions is recovered in closed form") {
    // h(x) = x^2, mu = 0, sigma = 1: u(t, x) = x^2 + (T - t).
    auto p = brownian_problem([](const Matrix& x) {
        Matrix out = x.col(0).cwiseProduct(x.col(0));
        return out;
    });
    auto grid = spde::make_uniform_grid(1.0, 4);
    RegressionConfig cfg;
    cfg.basis_degree = 3;
    cfg.sample_count = 20000;

    spde::StreamFactory fac(29);
    spde::RngStream x0 = fac.stream(spde::Stream::Shuffle);
    spde::RngStream w = fac.stream(spde::Stream::W);
    auto sol = spde::regression_corrector_solve(p, grid, Matrix::Zero(4, 1), cfg, x0, w);

    Matrix xs = linspace_column(-0.2, 0.2, 21);
    Matrix u0 = spde::evaluate_regression(sol, 0, xs);
    Matrix expect = (xs.col(0).array().square() + 1.0).matrix();
    CHECK(testutil::max_abs_diff(Matrix(u0.col(0)), expect) < 0.03);

    // Node 2 carries the shorter remaining horizon.
    Matrix u2 = spde::evaluate_regression(sol, 2, xs);
    Matrix expect2 = (xs.col(0).array().square() + 0.5).matrix();
    CHECK(testutil::max_abs_diff(Matrix(u2.col(0)), expect2) < 0.03);
}

TEST_CASE("a constant driver accumulates through the fixed-point pass") {
    // f = c: U_0(x) = x + c T for the linear martingale terminal.
    auto p = testutil::linear_martingale_problem(1);
    const double c = 0.7;
    p.f = [c](double, const Matrix& x, const Tensor&, const Tensor&) {
        return Tensor::detached(Matrix(Matrix::Constant(x.rows(), 1, c)));
    };
    auto grid = spde::make_uniform_grid(1.0, 4);
    RegressionConfig cfg;
    cfg.basis_degree = 1;
    cfg.sample_count = 10000;

    spde::StreamFactory fac(31);
    spde::RngStream x0 = fac.stream(spde::Stream::Shuffle);
    spde::RngStream w = fac.stream(spde::Stream::W);
    auto sol = spde::regression_corrector_solve(p, grid, Matrix::Zero(4, 1), cfg, x0, w);

    Matrix xs = linspace_column(-0.2, 0.2, 21);
    Matrix u0 = spde::evaluate_regression(sol, 0, xs);
    CHECK(testutil::max_abs_diff(u0, Matrix(xs + Matrix::Constant(21, 1, c))) < 0.02);
}

TEST_CASE("the benchmark value at the origin is recovered on a short grid") {
    auto p = spde::benchmark_problem(1);
    auto grid = spde::make_uniform_grid(1.0, 8);
    spde::StreamFactory fac(41);
    spde::RngStream brng = fac.stream(spde::Stream::B);
    Matrix b = spde::sample_noise_path(grid, 1, brng);

    RegressionConfig cfg;
    cfg.basis_degree = 4;
    cfg.sample_count = 20000;
    spde::RngStream x0 = fac.stream(spde::Stream::Shuffle);
    spde::RngStream w = fac.stream(spde::Stream::W);
    auto sol = spde::regression_corrector_solve(p, grid, b, cfg, x0, w);

    Matrix origin = Matrix::Zero(1, 1);
    const double approx = spde::evaluate_regression(sol, 0, origin)(0, 0);
    const double exact = spde::exact_solution(p, 0.0, origin, spde::tail_increment(b, 0))(0, 0);
    CHECK(std::abs(approx - exact) < 0.05);
    CHECK(std::abs(exact) > 1.0);  // the benchmark level sits near pi/2
}

TEST_CASE("degenerate designs raise a rank error suggesting remediation") {
    auto p = testutil::linear_martingale_problem(1);
    p.sample_x0 = [](spde::RngStream&, Matrix& out) { out.setConstant(0.5); };
    auto grid = spde::make_uniform_grid(1.0, 1);  // no diffusion happens before step 0
    RegressionConfig cfg;
    cfg.basis_degree = 2;
    cfg.sample_count = 500;
    spde::StreamFactory fac(3);
    spde::RngStream x0 = fac.stream(spde::Stream::Shuffle);
    spde::RngStream w = fac.stream(spde::Stream::W);
    try {
        (void)spde::regression_corrector_solve(p, grid, Matrix::Zero(1, 1), cfg, x0, w);
        FAIL("expected a rank error");
    } catch (const spde::NumericError& e) {
        const std::string what = e.what();
        CHECK(what.find("sample count") != std::string::npos);
        CHECK(e.step_index() == 0);
    }
}

TEST_CASE("dimension guard and evaluation guards") {
    auto p3 = testutil::linear_martingale_problem(3);
    auto grid = spde::make_uniform_grid(1.0, 2);
    RegressionConfig cfg;
    cfg.sample_count = 100;
    spde::StreamFactory fac(5);
    spde::RngStream x0 = fac.stream(spde::Stream::Shuffle);
    spde::RngStream w = fac.stream(spde::Stream::W);
    CHECK_THROWS_AS(
        (void)spde::regression_corrector_solve(p3, grid, Matrix::Zero(2, 1), cfg, x0, w),
        std::invalid_argument);

    auto p = testutil::linear_martingale_problem(1);
    CHECK_THROWS_AS(
        (void)spde::regression_corrector_solve(p, grid, Matrix::Zero(3, 1), cfg, x0, w),
        std::invalid_argument);

    cfg.basis_degree = 2;
    cfg.sample_count = 2000;
    auto sol = spde::regression_corrector_solve(p, grid, Matrix::Zero(2, 1), cfg, x0, w);
    Matrix xs = linspace_column(-1.0, 1.0, 5);
    CHECK(testutil::bit_equal(spde::evaluate_regression(sol, 2, xs), p.terminal(xs)));
    CHECK_THROWS_AS((void)spde::evaluate_regression(sol, -1, xs), std::invalid_argument);
    CHECK_THROWS_AS((void)spde::evaluate_regression(sol, 3, xs), std::invalid_argument);
}

}  // TEST_SUITE
