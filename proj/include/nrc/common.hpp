#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nrc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown for invalid parameters, malformed configs, bad file headers.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when a numerical procedure cannot proceed (rank deficiency,
/// degenerate matrices, shape mismatches).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when an integration or state iteration produces non-finite values.
struct DivergedError : NumericalError {
    using NumericalError::NumericalError;
};

struct DimensionError : NumericalError {
    using NumericalError::NumericalError;
};

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive a child seed from a master seed and up to two stream indices.
/// Seeds depend only on the arguments, never on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0) {
    return mix64(mix64(master ^ mix64(a)) ^ mix64(b + 0x51ed2701a7b3c9d5ULL));
}

} // namespace nrc
