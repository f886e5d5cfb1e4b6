#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace orbit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all numerical/contract errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ValueError : Error {
    using Error::Error;
};

/// Action set does not span the action space; carries the numerical rank.
struct RankError : Error {
    int numerical_rank;
    RankError(const std::string& msg, int rank) : Error(msg), numerical_rank(rank) {}
};

struct SingularityError : Error {
    using Error::Error;
};

/// A surrogate rollout blew up; carries the step at which it happened.
struct DivergenceError : Error {
    int step;
    explicit DivergenceError(const std::string& msg, int step_index)
        : Error(msg), step(step_index) {}
};

struct ParseError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

/// Derives an independent generator from a master seed and a stream index,
/// so that e.g. each trajectory of a campaign gets its own reproducible stream.
/// seed_seq keeps only 32 bits per element, so the 64-bit inputs are split.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    const std::uint64_t mixed = stream ^ 0x9e3779b97f4a7c15ull;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
    return Rng(seq);
}

inline Vec gaussian_vector(int n, double sigma, Rng& rng) {
    std::normal_distribution<double> dist(0.0, sigma);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

inline void require_finite(const Vec& v, const char* what) {
    if (!v.allFinite()) throw ValueError(std::string(what) + ": non-finite entries");
}

inline void require_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw ValueError(std::string(what) + ": non-finite entries");
}

}  // namespace orbit
