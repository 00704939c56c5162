#pragma once

#include <aps/autodiff/var.hpp>
#include <aps/error.hpp>
#include <aps/rng.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace testing {

template <class F>
std::optional<aps::ErrorCode> error_of(F&& f)
{
    try {
        f();
    } catch (const aps::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

// Copy of a Var's values; safe to iterate when the Var is a temporary.
inline std::vector<double> values(const aps::ad::Var& v)
{
    return {v.value().values().begin(), v.value().values().end()};
}

inline aps::ad::Tensor random_tensor(aps::ad::Shape shape, aps::CounterRng& rng, double scale = 1.0)
{
    aps::ad::Tensor t(std::move(shape));
    for (auto& v : t.values())
        v = rng.uniform(-scale, scale);
    return t;
}

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences of the scalar f() with respect to every element of each var, compared with
// the analytic gradients.
inline GradCheck check_gradients(const std::function<aps::ad::Var()>& f, std::vector<aps::ad::Var> vars,
                                 double h = 1e-5, double floor = 1e-6)
{
    namespace ad = aps::ad;
    const ad::Var out = f();
    const auto g = ad::grad(out, vars);
    GradCheck r;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        auto& v = vars[i].mutable_value();
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double x = v[k];
            v[k] = x + h;
            const double up = f().item();
            v[k] = x - h;
            const double down = f().item();
            v[k] = x;
            const double numeric = (up - down) / (2.0 * h);
            r.max_rel = std::max(r.max_rel, relative_error(g[i].value()[k], numeric, floor));
            ++r.checked;
        }
    }
    return r;
}

} // namespace testing
