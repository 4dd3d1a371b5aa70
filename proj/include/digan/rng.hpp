#pragma once

#include <cmath>
#include <cstdint>

namespace digan {

// Splittable counter-based generator (splitmix64 over a keyed counter).
// Every run derives all of its randomness from one seed through split();
// no ambient entropy is ever consulted, so reruns are bitwise identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), counter_(0) {}

    // Derives an independent stream; the parent stream is not advanced.
    Rng split(std::uint64_t stream) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(stream + 0x632be59bd9b4e019ull));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller; the paired draw is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * kPi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

private:
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace digan
