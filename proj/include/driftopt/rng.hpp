#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string_view>

namespace driftopt {

// Splittable, seedable PRNG built on splitmix64. Every stochastic operation
// in the library takes one of these explicitly; independent tasks get
// independent streams via split() or child(key).
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : seed_(seed), state_(mix(seed ^ kStreamSalt)) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
    // so the stream position is independent of call history.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Sample an index from an unnormalized non-negative weight vector.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive mass");
        double u = uniform01() * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size() - 1);
    }

    // Child stream that advances this generator (sequential splitting).
    SplitRng split() { return SplitRng(next_u64()); }

    // Keyed child stream; does not advance this generator, so the same key
    // always yields the same stream regardless of call order.
    SplitRng child(std::uint64_t key) const { return SplitRng(mix(seed_ + mix(key ^ kChildSalt))); }

  private:
    static constexpr double kPi = 3.14159265358979323846;
    static constexpr std::uint64_t kStreamSalt = 0x5851f42d4c957f2dULL;
    static constexpr std::uint64_t kChildSalt = 0x14057b7ef767814fULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
};

// FNV-1a, used to derive child-stream keys from method names and the like.
inline std::uint64_t hash_key(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace driftopt
