#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dualctl {

// splitmix64 step; used to derive independent stream seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31u);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ (0xd1342543de82ef95ull * (tag + 1));
    return splitmix64(s);
}

// Deterministic random stream. Every stochastic routine in the library takes an
// explicit Rng handle; nothing reads global entropy, so seeded runs replay
// bit-identically.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller cosine branch. Consumes exactly two engine
    // words per draw, which keeps stream consumption independent of the values
    // drawn (needed for common-random-number comparisons).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    // Child stream decorrelated from this one.
    Rng spawn() { return Rng(next_u64() ^ 0x0a02bdbf7bb3c0a7ull); }

private:
    static constexpr double kTwoPi = 6.283185307179586476925286766559;
    std::mt19937_64 engine_;
};

}  // namespace dualctl
