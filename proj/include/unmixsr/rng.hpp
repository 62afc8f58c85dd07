#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "unmixsr/common.hpp"

namespace unmixsr {

// Deterministic 64-bit generator (splitmix64). Forking by name derives an
// independent stream from the root seed, so draw order in one stream never
// shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Box-Muller; always consumes exactly two uniforms.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Symmetric Dirichlet(alpha = 1) draw: normalized unit exponentials.
    std::vector<double> dirichlet(int p) {
        std::vector<double> a(static_cast<std::size_t>(p));
        double sum = 0.0;
        for (auto& v : a) {
            v = -std::log(1.0 - uniform());
            sum += v;
        }
        for (auto& v : a) v /= sum;
        return a;
    }

    // Independent stream keyed by (root seed, name); insensitive to how many
    // draws this stream has made.
    Rng fork(std::string_view name) const {
        std::uint64_t h = fnv1a64(name.data(), name.size(), seed_ ^ 0x5851f42d4c957f2dull);
        return Rng(h);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace unmixsr
