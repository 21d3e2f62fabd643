#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ams {

/// FNV-1a 64-bit hash; used for substream derivation and content hashing.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t fnv1a_mix(std::uint64_t x, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (int i = 0; i < 8; ++i) {
        h ^= x & 0xff;
        h *= 0x100000001b3ull;
        x >>= 8;
    }
    return h;
}

/// Deterministic counter-based generator (splitmix64 output function).
/// Cheap to fork: every entity in the pipeline draws from its own substream,
/// so generated data is independent of iteration order.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    /// Substream keyed by a label and an index; e.g. fork("patient", 7).
    Rng fork(std::string_view label, std::uint64_t index = 0) const {
        return Rng(splitmix(state_ ^ fnv1a_mix(index, fnv1a(label))));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return splitmix(state_);
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller. No spare caching: the draw count per
    /// call is fixed, which keeps substreams reproducible under refactoring.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Exponential with the given rate (events per unit time).
    double exponential(double rate) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(u) / rate;
    }

    static std::uint64_t splitmix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace ams
