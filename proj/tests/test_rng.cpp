#include <doctest.h>

#include <spde/rng.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

using spde::RngStream;
using spde::Stream;
using spde::StreamFactory;

TEST_SUITE("rng") {

TEST_CASE("identical (seed, stream) pairs replay bit-identical sequences") {
    RngStream a(42, Stream::W);
    RngStream b(42, Stream::W);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(42, Stream::W);
    RngStream d(42, Stream::W);
    for (int i = 0; i < 1000; ++i) {
        CHECK(c.normal() == d.normal());
        CHECK(c.uniform01() == d.uniform01());
    }
}

TEST_CASE("distinct streams and distinct seeds give distinct sequences") {
    RngStream w(42, Stream::W);
    RngStream b(42, Stream::B);
    RngStream w2(43, Stream::W);
    int same_wb = 0, same_seed = 0;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t x = w.next_u64();
        if (x == b.next_u64()) ++same_wb;
        if (x == w2.next_u64()) ++same_seed;
    }
    CHECK(same_wb == 0);
    CHECK(same_seed == 0);
}

TEST_CASE("drawing from one stream does not advance another") {
    RngStream b_ref(42, Stream::B);
    std::vector<std::uint64_t> expected;
    for (int i = 0; i < 32; ++i) expected.push_back(b_ref.next_u64());

    RngStream w(42, Stream::W);
    for (int i = 0; i < 999; ++i) (void)w.next_u64();
    RngStream b(42, Stream::B);
    for (int i = 0; i < 32; ++i) CHECK(b.next_u64() == expected[static_cast<std::size_t>(i)]);
}

TEST_CASE("substream hashing is deterministic and path-sensitive") {
    CHECK(spde::substream(Stream::W, {1, 2}) == spde::substream(Stream::W, {1, 2}));
    CHECK(spde::substream(Stream::W, {1, 2}) != spde::substream(Stream::W, {2, 1}));
    CHECK(spde::substream(Stream::W, {1, 2}) != spde::substream(Stream::B, {1, 2}));
    CHECK(spde::substream(Stream::W, {0}) != spde::substream(Stream::W, {0, 0}));
}

TEST_CASE("factory streams match direct construction") {
    StreamFactory fac(7);
    RngStream a = fac.stream(Stream::Init);
    RngStream b(7, Stream::Init);
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c = fac.stream(Stream::W, {5, 9});
    RngStream d(7, spde::substream(Stream::W, {5, 9}));
    for (int i = 0; i < 16; ++i) CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("uniform draws respect their ranges") {
    RngStream rng(1, Stream::Shuffle);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = rng.uniform(-0.2, 0.2);
        CHECK(v >= -0.2);
        CHECK(v < 0.2);
    }
}

TEST_CASE("normal draws have standard moments") {
    // mean within 4 standard errors, variance within 1% (n = 10^6)
    RngStream rng(123, Stream::W);
    const int n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(var == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("uniform01 mean and variance") {
    RngStream rng(9, Stream::Shuffle);
    const int n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform01();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.002));
    CHECK(sumsq / n - mean * mean == doctest::Approx(1.0 / 12.0).epsilon(0.01));
}

}  // TEST_SUITE
