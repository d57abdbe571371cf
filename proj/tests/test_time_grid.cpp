#include <doctest.h>

#include <spde/time_grid.hpp>

#include <cmath>
#include <numeric>

using spde::TimeGrid;
using spde::make_uniform_grid;

TEST_SUITE("time_grid") {

TEST_CASE("uniform grid T=1 N=4 has the expected nodes") {
    const TimeGrid g = make_uniform_grid(1.0, 4);
    REQUIRE(g.nodes.size() == 5);
    CHECK(g.nodes[0] == 0.0);
    CHECK(g.nodes[1] == 0.25);
    CHECK(g.nodes[2] == 0.5);
    CHECK(g.nodes[3] == 0.75);
    CHECK(g.nodes[4] == 1.0);
    CHECK(g.mesh == 0.25);
    CHECK(g.regularity == 1.0);
}

TEST_CASE("first interior nodes of the two standard refinements") {
    CHECK(make_uniform_grid(1.0, 32).nodes[1] == 0.03125);
    CHECK(make_uniform_grid(1.0, 16).nodes[1] == 0.0625);
}

TEST_CASE("steps reproduce node differences exactly and sum to the horizon") {
    for (int n : {1, 3, 7, 16, 32, 100}) {
        const TimeGrid g = make_uniform_grid(1.0, n);
        REQUIRE(g.num_steps() == n);
        for (int i = 0; i < n; ++i)
            CHECK(g.steps[static_cast<std::size_t>(i)] ==
                  g.nodes[static_cast<std::size_t>(i) + 1] - g.nodes[static_cast<std::size_t>(i)]);
        const double sum = std::accumulate(g.steps.begin(), g.steps.end(), 0.0);
        const double ulp = std::nextafter(1.0, 2.0) - 1.0;
        CHECK(std::abs(sum - 1.0) <= 8.0 * ulp);
        CHECK(g.horizon() == 1.0);
        CHECK(g.nodes.front() == 0.0);
        CHECK(g.nodes.back() == 1.0);
    }
}

TEST_CASE("argument validation") {
    CHECK_THROWS_AS(make_uniform_grid(0.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_uniform_grid(-1.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_uniform_grid(1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::from_nodes({0.0}), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::from_nodes({0.1, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::from_nodes({0.0, 0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::from_nodes({0.0, 0.5, 0.4}), std::invalid_argument);
}

TEST_CASE("non-uniform grids carry mesh and regularity") {
    const TimeGrid g = TimeGrid::from_nodes({0.0, 0.1, 0.3, 1.0});
    CHECK(g.num_steps() == 3);
    CHECK(g.mesh == doctest::Approx(0.7));
    CHECK(g.regularity == doctest::Approx(7.0));
    CHECK(g.horizon() == 1.0);
}

}  // TEST_SUITE
