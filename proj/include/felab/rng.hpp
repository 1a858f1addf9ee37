#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "felab/errors.hpp"

namespace felab {

// xoshiro256** seeded through SplitMix64. Self-contained so that streams are
// reproducible across platforms and standard library versions; std::mt19937
// would pin us to a fixed engine but std::normal_distribution is not
// guaranteed to produce the same sequence everywhere.
class Rng {
public:
    static constexpr const char* kAlgorithm = "xoshiro256** (splitmix64 seeded)";

    explicit Rng(uint64_t seed) {
        // SplitMix64 expansion of the seed into the 256-bit state.
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0,n) by rejection, so no modulo bias.
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw ValueError("Rng::bounded: n must be positive");
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();  // guard log(0)
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Normal truncated to +/-2 sigma by rejection, then rescaled so the
    // realized standard deviation of the draws equals sigma exactly.
    // Plain truncation at 2 sigma shrinks the std to ~0.8796 sigma, which
    // would make "init weights have std 0.02" silently false.
    double truncated_normal(double sigma) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * (sigma / kStdOfTwoSigmaTruncatedNormal);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Index draw from unnormalized nonnegative weights, proportional to weight.
    size_t weighted_index(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) throw ValueError("Rng::weighted_index: weights must be finite and nonnegative");
            total += w;
        }
        if (total <= 0.0) throw ValueError("Rng::weighted_index: total weight must be positive");
        const double u = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;  // u landed on the rounding edge
    }

    // Std of a unit normal truncated to [-2,2]: sqrt(1 - 4*phi(2)/(2*Phi(2)-1)).
    static constexpr double kStdOfTwoSigmaTruncatedNormal = 0.8796256610342398;

private:
    static constexpr uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4]{};
    double spare_{0.0};
    bool has_spare_{false};
};

}  // namespace felab
