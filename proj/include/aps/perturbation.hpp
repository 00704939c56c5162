#pragma once

// Masked and noised copies of a feature tensor for the auxiliary reconstruction tasks.

#include <aps/config.hpp>
#include <aps/error.hpp>
#include <aps/rng.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

namespace aps {

/// frames x joints x channels, row-major.
struct FeatureTensor {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::size_t channels = 0;
    std::vector<double> data;

    FeatureTensor() = default;
    FeatureTensor(std::size_t t, std::size_t j, std::size_t c, double fill = 0.0)
        : frames(t), joints(j), channels(c), data(t * j * c, fill)
    {
    }

    std::size_t size() const { return data.size(); }
    std::size_t index(std::size_t t, std::size_t j, std::size_t c) const { return (t * joints + j) * channels + c; }
    double& operator()(std::size_t t, std::size_t j, std::size_t c) { return data[index(t, j, c)]; }
    double operator()(std::size_t t, std::size_t j, std::size_t c) const { return data[index(t, j, c)]; }

    bool same_shape(const FeatureTensor& o) const
    {
        return frames == o.frames && joints == o.joints && channels == o.channels;
    }

    bool operator==(const FeatureTensor&) const = default;
};

enum class CorruptionKind { Masked, Noised };

struct CorruptionMask {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> flags; // 1 = corrupted
    CorruptionKind kind = CorruptionKind::Masked;

    CorruptionMask() = default;
    CorruptionMask(const FeatureTensor& like, CorruptionKind k)
        : frames(like.frames), joints(like.joints), channels(like.channels), flags(like.size(), 0), kind(k)
    {
    }

    bool operator()(std::size_t t, std::size_t j, std::size_t c) const
    {
        return flags[(t * joints + j) * channels + c] != 0;
    }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (auto f : flags)
            n += f;
        return n;
    }

    /// True when any channel of (t, j) is corrupted.
    bool joint_hit(std::size_t t, std::size_t j) const
    {
        for (std::size_t c = 0; c < channels; ++c)
            if ((*this)(t, j, c))
                return true;
        return false;
    }

    bool operator==(const CorruptionMask&) const = default;
};

struct CorruptedTensor {
    FeatureTensor values;
    CorruptionMask mask;
};

struct PerturbedBatch {
    FeatureTensor original;
    CorruptedTensor masked;
    CorruptedTensor noised;
    std::uint64_t seed = 0;
};

namespace detail {

inline void check_probability(double p, const char* name)
{
    if (!(p >= 0.0 && p <= 1.0))
        fail(ErrorCode::InvalidProbability, std::string(name) + " must lie in [0, 1], got " + std::to_string(p));
}

} // namespace detail

/// Flags each scalar with probability p_m (or each (frame, joint) when joint_level) and writes the
/// sentinel 0 there. The network swaps flagged entries for its learnable mask token.
inline CorruptedTensor apply_mask(const FeatureTensor& features, double p_m, std::uint64_t rng_seed,
                                  bool joint_level = false)
{
    detail::check_probability(p_m, "p_m");
    CorruptedTensor out{features, CorruptionMask(features, CorruptionKind::Masked)};
    CounterRng rng(rng_seed);
    const std::size_t C = features.channels;
    for (std::size_t tj = 0; tj < features.frames * features.joints; ++tj) {
        if (joint_level) {
            if (!rng.bernoulli(p_m))
                continue;
            for (std::size_t c = 0; c < C; ++c) {
                out.mask.flags[tj * C + c] = 1;
                out.values.data[tj * C + c] = 0.0;
            }
        } else {
            for (std::size_t c = 0; c < C; ++c) {
                if (rng.bernoulli(p_m)) {
                    out.mask.flags[tj * C + c] = 1;
                    out.values.data[tj * C + c] = 0.0;
                }
            }
        }
    }
    return out;
}

/// Adds N(0, sigma^2) to each scalar independently selected with probability p_n.
inline CorruptedTensor apply_noise(const FeatureTensor& features, double p_n, double sigma, std::uint64_t rng_seed)
{
    detail::check_probability(p_n, "p_n");
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        fail(ErrorCode::InvalidSigma, "sigma must be positive, got " + std::to_string(sigma));
    CorruptedTensor out{features, CorruptionMask(features, CorruptionKind::Noised)};
    CounterRng rng(rng_seed);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (rng.bernoulli(p_n)) {
            out.mask.flags[i] = 1;
            out.values.data[i] = features.data[i] + sigma * rng.normal();
        }
    }
    return out;
}

inline std::uint64_t mask_stream_seed(std::uint64_t seed) { return derive_key(seed, "mask"); }
inline std::uint64_t noise_stream_seed(std::uint64_t seed) { return derive_key(seed, "noise"); }

/// (P, P_M, P_D). cfg.sigma is used as-is, in the units of `features`.
inline PerturbedBatch build_batch(const FeatureTensor& features, const TrainConfig& cfg, std::uint64_t seed)
{
    PerturbedBatch batch;
    batch.original = features;
    batch.seed = seed;
    if (!cfg.flag_e) {
        batch.masked = {features, CorruptionMask(features, CorruptionKind::Masked)};
        batch.noised = {features, CorruptionMask(features, CorruptionKind::Noised)};
        return batch;
    }
    batch.masked = apply_mask(features, cfg.p_m, mask_stream_seed(seed), cfg.joint_mask);
    batch.noised = apply_noise(features, cfg.p_n, cfg.sigma, noise_stream_seed(seed));
    return batch;
}

} // namespace aps
