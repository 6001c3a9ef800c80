#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cddsa {

// Deterministic 64-bit generator (xoshiro256** seeded through splitmix64).
// All randomness in the project flows through this type so that runs are
// reproducible bit-for-bit regardless of the standard library in use.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ULL) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
        have_gauss_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller, cached pairwise.
    double gaussian() {
        if (have_gauss_) {
            have_gauss_ = false;
            return cached_gauss_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_gauss_ = r * std::sin(theta);
        have_gauss_ = true;
        return r * std::cos(theta);
    }

    // Gumbel(0,1) sample, clamped away from the log singularities.
    double gumbel() {
        double u = uniform();
        if (u < 1e-12) u = 1e-12;
        if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
        return -std::log(-std::log(u));
    }

    template <typename Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(c[i - 1], c[j]);
        }
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Named substream derivation: hash the parent seed with a tag tuple.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
        std::uint64_t x = seed;
        std::uint64_t h = splitmix64(x);
        x = h ^ (a * 0x9e3779b97f4a7c15ULL + 1);
        h = splitmix64(x);
        x = h ^ (b * 0xc2b2ae3d27d4eb4fULL + 2);
        h = splitmix64(x);
        x = h ^ (c * 0x165667b19e3779f9ULL + 3);
        return splitmix64(x);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t state_[4]{};
    bool have_gauss_ = false;
    double cached_gauss_ = 0.0;
};

}  // namespace cddsa
