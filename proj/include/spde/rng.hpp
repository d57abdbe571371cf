#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace spde {

/// splitmix64 step: advances the state and returns a mixed 64-bit word.
/// Used to seed the main generator and to hash stream identifiers.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Named top-level random streams. Draws from distinct streams are
/// statistically independent; the B stream is never touched by training,
/// so "fixed noise path, fresh optimization" reruns reseed only the others.
enum class Stream : std::uint64_t {
    W = 1,        // driving Brownian increments of the forward process
    B = 2,        // auxiliary Brownian path of the backward equation
    Init = 3,     // network weight initialization
    Shuffle = 4,  // batch composition (initial-condition draws)
};

/// Builds a composite stream identifier from a base stream and an index path,
/// e.g. (W, {bpath, run, step}). Pure function of its inputs.
inline std::uint64_t substream(Stream base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = 0x8a5cd789635d2dffull ^ static_cast<std::uint64_t>(base);
    for (std::uint64_t part : path) {
        h ^= part + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        std::uint64_t s = h;
        h = splitmix64_next(s);
    }
    return h;
}

/// Counter-free splittable generator: xoshiro256++ seeded from (seed, stream)
/// through a splitmix64 chain. Identical (seed, stream) pairs replay
/// bit-identical sequences on every platform.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream) {
        std::uint64_t s = seed ^ (0xa0761d6478bd642full * (stream + 1));
        for (auto& w : state_) w = splitmix64_next(s);
    }

    RngStream(std::uint64_t seed, Stream stream)
        : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform draw in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform draw in [a, b).
    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal draw via the polar (Marsaglia) method. The rejected
    /// uniforms make consumption data-dependent but fully deterministic.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Convenience factory tying a master seed to the named streams.
class StreamFactory {
public:
    explicit StreamFactory(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    RngStream stream(Stream base) const {
        return RngStream(seed_, static_cast<std::uint64_t>(base));
    }

    RngStream stream(Stream base, std::initializer_list<std::uint64_t> path) const {
        return RngStream(seed_, substream(base, path));
    }

private:
    std::uint64_t seed_;
};

}  // namespace spde
