#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ma2rl {

/// Counter-based generator: every draw is a pure function of (key, counter).
///
/// Streams are split with fork(), which derives a new key from the parent key
/// and a caller-chosen identifier, so independent workers (or replays of a
/// single step) get reproducible draws without sharing mutable state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    [[nodiscard]] Rng fork(std::uint64_t stream) const noexcept {
        Rng child;
        child.key_ = mix(key_ ^ mix(stream + 0x3c6ef372fe94f82bULL));
        child.counter_ = 0;
        return child;
    }

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept { return mix(key_ + mix(counter_++)); }

    /// Uniform in the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Standard normal via Box-Muller; consumes two draws per call.
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double gumbel() noexcept { return -std::log(-std::log(uniform())); }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace ma2rl
