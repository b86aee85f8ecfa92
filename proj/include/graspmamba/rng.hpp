#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace graspmamba {

// std::mt19937_64 output is fully specified by the standard, but the standard
// distributions are not, so the mapping to doubles is done here to keep
// generated scenes and initial weights identical across toolchains.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is negligible for the small n used.
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

   private:
    std::mt19937_64 engine_;
};

// Derives an independent stream seed for item `index` of a run seeded with
// `seed`: seed XOR (index + 1) * golden-ratio constant, then a splitmix64
// finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ ((index + 1) * 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace graspmamba
