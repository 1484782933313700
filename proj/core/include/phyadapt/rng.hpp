#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace phyadapt {

// Deterministic RNG. std::mt19937_64 has a standard-specified output
// sequence, and all distribution transforms below are written out
// explicitly, so streams are reproducible across platforms and compilers
// (std::normal_distribution etc. are implementation-defined and never used).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<int>(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (no state caching: one draw consumes
    // exactly two uniforms, keeping call sites order-independent).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Index draw from unnormalized non-negative weights (CDF inversion).
    int weighted_index(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic sub-seed for a named stream, e.g. per-language generators.
inline uint64_t derive_seed(uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ fnv1a64(label));
}

inline uint64_t derive_seed(uint64_t seed, std::string_view label, uint64_t index) {
    return splitmix64(derive_seed(seed, label) + 0x632be59bd9b4e019ULL * (index + 1));
}

}  // namespace phyadapt
