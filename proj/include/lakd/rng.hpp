#pragma once

#include <cstdint>
#include <random>

namespace lakd {

/// Deterministic RNG with a platform-independent float mapping.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    float next_float() {
        return static_cast<float>((gen_() >> 40) * (1.0 / 16777216.0));
    }

    /// Uniform in [lo, hi).
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return gen_() % n; }

    /// Standard normal via Box-Muller (consumes two draws).
    float next_normal() {
        float u1 = next_float();
        while (u1 <= 0.0f) u1 = next_float();
        const float u2 = next_float();
        return std::sqrt(-2.0f * std::log(u1)) *
               std::cos(6.2831853071795864769f * u2);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace lakd
