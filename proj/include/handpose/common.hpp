#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace handpose {

// Base error; subclasses map onto CLI exit codes (data = 2, model = 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : Error {
    using Error::Error;
};
struct ModelError : Error {
    using Error::Error;
};

struct DegenerateFrame : Error {
    using Error::Error;
};
struct DegenerateConfiguration : Error {
    using Error::Error;
};
struct DegenerateNeighborhood : Error {
    using Error::Error;
};
struct InsufficientNeighbors : Error {
    using Error::Error;
};
struct MissingNormals : Error {
    using Error::Error;
};
struct EmptyFrame : DataError {
    using DataError::DataError;
};
struct EmptyTrainingSet : DataError {
    using DataError::DataError;
};
struct NoEdgePoints : Error {
    using Error::Error;
};
struct NoValidPoints : Error {
    using Error::Error;
};
struct LengthMismatch : DataError {
    using DataError::DataError;
};
struct OutOfFrustum : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

/// Uniform double in [0,1) from the top 53 bits of the generator output.
/// std::uniform_real_distribution is implementation-defined; this keeps
/// sampled values (and therefore trained models) reproducible everywhere.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform_in(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

/// Stable per-item seed derivation (splitmix64 finalizer), so work split
/// across threads or re-ordered loops still draws identical streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t item) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (item + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace handpose
