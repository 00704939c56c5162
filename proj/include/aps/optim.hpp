#pragma once

#include <aps/autodiff/var.hpp>
#include <aps/error.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace aps {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::uint64_t t = 0;
    std::vector<double> m;
    std::vector<double> v;

    bool operator==(const AdamState&) const = default;
};

inline std::vector<double> flatten_values(const std::vector<ad::Var>& vars)
{
    std::vector<double> out;
    for (const auto& v : vars)
        out.insert(out.end(), v.value().values().begin(), v.value().values().end());
    return out;
}

inline void assign_values(std::vector<ad::Var>& vars, const std::vector<double>& flat)
{
    std::size_t off = 0;
    for (auto& v : vars) {
        auto dst = v.mutable_value().values();
        if (off + dst.size() > flat.size())
            fail(ErrorCode::DimsMismatch, "flat vector too short for parameters");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
        off += dst.size();
    }
    if (off != flat.size())
        fail(ErrorCode::DimsMismatch, "flat vector longer than parameters");
}

/// Scales g in place so its L2 norm is at most max_norm (no-op for max_norm <= 0). Returns the
/// norm before clipping.
inline double clip_global_norm(std::vector<double>& g, double max_norm)
{
    double sq = 0.0;
    for (double x : g)
        sq += x * x;
    const double n = std::sqrt(sq);
    if (max_norm > 0.0 && n > max_norm) {
        const double s = max_norm / n;
        for (double& x : g)
            x *= s;
    }
    return n;
}

/// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(std::vector<double>& theta, const std::vector<double>& g, AdamState& state, double lr,
                      const AdamConfig& c = {})
{
    if (g.size() != theta.size())
        fail(ErrorCode::DimsMismatch, "gradient and parameter sizes differ");
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i]))
            fail(ErrorCode::AbortStep, "non-finite gradient at flat index " + std::to_string(i) + " (Adam step " +
                                           std::to_string(state.t + 1) + ")");
    if (state.m.empty() && state.t == 0) {
        state.m.assign(theta.size(), 0.0);
        state.v.assign(theta.size(), 0.0);
    }
    if (state.m.size() != theta.size() || state.v.size() != theta.size())
        fail(ErrorCode::DimsMismatch, "optimizer state does not match the parameter vector");
    ++state.t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g[i];
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g[i] * g[i];
        const double mh = state.m[i] / bc1;
        const double vh = state.v[i] / bc2;
        theta[i] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
}

/// Gradient of `loss` for `vars`, clipped, then one Adam step applied to the vars in place.
/// Returns the pre-clip gradient norm.
inline double adam_minimize(const ad::Var& loss, std::vector<ad::Var> vars, AdamState& state, double lr,
                            double clip)
{
    const std::vector<ad::Var> grads = ad::grad(loss, vars);
    std::vector<double> g = flatten_values(grads);
    const double n = clip_global_norm(g, clip);
    std::vector<double> theta = flatten_values(vars);
    adam_step(theta, g, state, lr);
    assign_values(vars, theta);
    return n;
}

} // namespace aps
