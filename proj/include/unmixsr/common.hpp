#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace unmixsr {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and the I/O code memcpys raw values");

// Invalid shapes, mismatched dimensions, bad hyperparameters.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// File and serialization failures (bad magic, truncation, unwritable paths).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite losses or other numerical breakdowns during a run.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Rejection-sampling style generation failures.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

// Symmetric (half-sample) reflection of an out-of-range index into [0, n).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace unmixsr
