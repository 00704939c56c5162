#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace aps {

// Counter-based generator. Draw i of a stream with key k is splitmix64_mix(k + (i + 1) * golden),
// i.e. SplitMix64 with its state exposed as (key, counter). Uniform doubles take the top 53 bits;
// normals use one Box-Muller cosine branch per pair of uniforms. Stream keys are derived from a
// root seed, an FNV-1a 64 hash of a text label, and up to two integer indices:
//   key = mix(mix(mix(seed ^ fnv1a(label)) ^ mix(a + golden)) ^ mix(b + 2 * golden))
// This is the whole algorithm, so the same streams can be reproduced in any language.

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::string_view label, std::uint64_t a = 0,
                                   std::uint64_t b = 0)
{
    std::uint64_t k = splitmix64_mix(seed ^ fnv1a64(label));
    k = splitmix64_mix(k ^ splitmix64_mix(a + kGolden));
    k = splitmix64_mix(k ^ splitmix64_mix(b + 2 * kGolden));
    return k;
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

    CounterRng(std::uint64_t seed, std::string_view label, std::uint64_t a = 0, std::uint64_t b = 0)
        : key_(derive_key(seed, label, a, b))
    {
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64()
    {
        ++counter_;
        return splitmix64_mix(key_ + counter_ * kGolden);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double normal()
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace aps
