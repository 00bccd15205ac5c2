#pragma once

// Seeded randomness for the whole pipeline. Every stream is derived from a
// named base seed via splitmix64 so that runs are reproducible bit-for-bit
// across platforms; distributions are hand-rolled because the std::
// distribution objects are implementation-defined.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace biaslab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Fold an arbitrary label into a seed. Used to derive independent streams
// ("teacher-train", "eval", ...) from one experiment seed.
inline std::uint64_t seed_mix(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ h);
}

inline std::uint64_t seed_mix(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return splitmix64(seed_mix(seed, label) ^ splitmix64(index));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Box-Muller, one value per call (no cached spare, keeps replay trivial).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u = 1.0 - real01();
        double v = real01();
        double r = std::sqrt(-2.0 * std::log(u));
        return mean + stddev * r * std::cos(6.283185307179586 * v);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Index drawn proportionally to `weights` (need not be normalized).
    std::size_t pick_weighted(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = real01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace biaslab
