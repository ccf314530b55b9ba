#pragma once

#include <cstdint>

#include "copi/errors.hpp"
#include "copi/matrix.hpp"

namespace copi {

/// Counter-based pseudo-random generator (splitmix64 finalizer over a keyed
/// counter). Pure integer arithmetic, so a given seed yields the same stream
/// on every platform. split(stream) derives an independent child generator;
/// parent and children never share counter state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)), counter_(0) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi). lo == hi is allowed and yields the constant lo.
    double uniform(double lo, double hi) {
        if (lo > hi) throw ContractError("Rng::uniform: lo > hi");
        return lo + (hi - lo) * uniform01();
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal() {
        double u1 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        const double u2 = uniform01();
        constexpr double two_pi = 6.28318530717958647692;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    /// Uniform integer in [0, n), n >= 1. Fixed-point scaling: deterministic
    /// and unbiased to ~2^-64, which is ample for shuffling.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n == 0");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Child generator for an independent stream. Deterministic in
    /// (parent key, stream id); does not advance the parent.
    Rng split(std::uint64_t stream) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(stream + 0xD1B54A32D192ED03ull));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t key() const { return key_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Entry distributions for rand_matrix.
struct Uniform {
    double lo;
    double hi;
};

/// Uniform in +-sqrt(1 / fan_in); variance-preserving init for dense layers.
struct ScaledUniform {
    std::size_t fan_in;
};

/// Fills row-major, one draw per entry, consuming rng deterministically.
inline Matrix rand_matrix(Rng& rng, std::size_t rows, std::size_t cols, Uniform dist) {
    if (rows == 0 || cols == 0) throw ContractError("rand_matrix: zero dimension");
    if (dist.lo > dist.hi) throw ContractError("rand_matrix: invalid bounds (lo > hi)");
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(dist.lo, dist.hi);
    return m;
}

inline Matrix rand_matrix(Rng& rng, std::size_t rows, std::size_t cols, ScaledUniform dist) {
    if (dist.fan_in == 0) throw ContractError("rand_matrix: fan_in == 0");
    const double b = std::sqrt(1.0 / static_cast<double>(dist.fan_in));
    return rand_matrix(rng, rows, cols, Uniform{-b, b});
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace copi
