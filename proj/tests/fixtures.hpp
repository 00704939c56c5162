#pragma once

// Small models and data shared by the unit tests and the acceptance runner.

#include <aps/dataio.hpp>
#include <aps/model.hpp>
#include <aps/trainer.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace fixtures {

inline std::vector<aps::MotionSequence> sinusoids(std::size_t count, std::size_t joints, std::size_t frames,
                                                  std::uint64_t seed = 0, double amplitude = 50.0)
{
    std::vector<aps::MotionSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        aps::SynthOptions o;
        o.joints = joints;
        o.frames = frames;
        o.seed = seed + i;
        o.amplitude = amplitude;
        out.push_back(aps::synth_generate(o));
    }
    return out;
}

// Two-sequence sinusoid set with J=5, T=60 at 25 fps, windows of 10 observed and 25 future frames.
inline aps::WindowedDataset smoke_dataset()
{
    return aps::make_windows(sinusoids(2, 5, 60), 10, 25, 1);
}

// J=4, six input tokens (seven observed frames with quotient features), D=8, r=2, L=1.
inline aps::TrainConfig tiny_config()
{
    aps::TrainConfig c;
    c.d_model = 8;
    c.rank = 2;
    c.heads = 2;
    c.layers = 1;
    c.critic_width = 8;
    c.observed = 7;
    c.future = 3;
    c.batch_size = 2;
    c.seed = 11;
    return c;
}

struct TinySetup {
    aps::WindowedDataset ds;
    aps::Model model;
    std::vector<aps::PreparedWindow> prepared;
    aps::StepBatch batch;
};

inline TinySetup tiny_setup(const aps::TrainConfig& cfg = tiny_config())
{
    TinySetup s;
    // unit-amplitude motion keeps the objective O(1), so finite differences at step 1e-5 are not
    // swamped by roundoff
    s.ds = aps::make_windows(sinusoids(1, 4, cfg.observed + cfg.future + 2, 5, 1.0), cfg.observed, cfg.future, 1);
    s.model = aps::make_model(cfg, 4, 0, aps::fit_normalizer(s.ds, cfg.flag_d));
    // move every parameter off its structured initial value (zeros, ones, identity gates)
    aps::CounterRng rng(cfg.seed, "fixture.jitter");
    for (auto& e : s.model.params.entries())
        for (auto& v : e.var.mutable_value().values())
            v += rng.uniform(-0.2, 0.2);
    s.prepared = aps::prepare_dataset(s.model, s.ds);
    s.batch = aps::make_step_batch(s.model, {&s.prepared[0], &s.prepared[1]}, {3, 4});
    return s;
}

// Generator total plus both critic losses (penalty included) with the fake window left attached,
// so the value is a smooth function of every parameter.
inline aps::ad::Var full_objective(const aps::Model& m, const aps::StepBatch& b)
{
    const aps::GeneratorTerms g = aps::generator_objective(m, b);
    const aps::ad::Var fake = aps::critic_window(m, g.pred, b);
    const aps::CriticTerms c = aps::critic_objective(m, b, fake, 99);
    return g.total + c.loss;
}

struct FullGradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

// Central differences over every scalar parameter against the analytic gradient.
// Relative error is |a - n| / max(|a|, |n|, floor). At step 1e-5 the difference quotient of this
// objective carries ~4e-9 of roundoff, so gradients below the floor are held to floor * tolerance
// in absolute terms instead.
inline FullGradCheck full_gradient_check(aps::Model& m, const aps::StepBatch& b, double h = 1e-5,
                                         double floor = 1e-4)
{
    namespace ad = aps::ad;
    const auto vars = m.params.vars();
    const ad::Var out = full_objective(m, b);
    const auto g = ad::grad(out, vars);
    FullGradCheck r;
    ad::NoGradGuard no_grad_outer;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        auto& v = m.params.entries()[i].var.mutable_value();
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double x = v[k];
            double f[2];
            for (int s = 0; s < 2; ++s) {
                v[k] = x + (s ? -h : h);
                ad::GradModeGuard on(true); // the penalty needs a graph for its input gradient
                f[s] = full_objective(m, b).item();
            }
            v[k] = x;
            const double numeric = (f[0] - f[1]) / (2.0 * h);
            const double a = g[i].value()[k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > r.max_rel) {
                r.max_rel = rel;
                r.worst = m.params.entries()[i].name + "[" + std::to_string(k) + "]";
            }
            ++r.checked;
        }
    }
    return r;
}

// One-hidden-layer tanh critic evaluated with plain loops, independent of the autodiff engine.
struct LoopCritic {
    std::size_t in = 0, hidden = 0;
    std::vector<double> w1, b1, w2; // w1 is in x hidden, row-major
    double b2 = 0.0;

    LoopCritic(std::size_t n_in, std::size_t n_hidden, std::uint64_t seed) : in(n_in), hidden(n_hidden)
    {
        aps::CounterRng rng(seed, "fixture.critic");
        w1.resize(in * hidden);
        b1.resize(hidden);
        w2.resize(hidden);
        for (auto* v : {&w1, &b1, &w2})
            for (auto& x : *v)
                x = rng.uniform(-0.8, 0.8);
        b2 = rng.uniform(-0.5, 0.5);
    }

    double score(const double* x) const
    {
        double out = b2;
        for (std::size_t h = 0; h < hidden; ++h) {
            double a = b1[h];
            for (std::size_t i = 0; i < in; ++i)
                a += x[i] * w1[i * hidden + h];
            out += w2[h] * std::tanh(a);
        }
        return out;
    }

    std::vector<double> input_gradient(const double* x) const
    {
        std::vector<double> g(in, 0.0);
        for (std::size_t h = 0; h < hidden; ++h) {
            double a = b1[h];
            for (std::size_t i = 0; i < in; ++i)
                a += x[i] * w1[i * hidden + h];
            const double t = std::tanh(a);
            const double c = w2[h] * (1.0 - t * t);
            for (std::size_t i = 0; i < in; ++i)
                g[i] += c * w1[i * hidden + h];
        }
        return g;
    }

    // The same critic through the autodiff ops.
    aps::Critic as_autodiff() const
    {
        namespace ad = aps::ad;
        const ad::Var W1 = ad::constant(ad::Tensor({in, hidden}, w1));
        const ad::Var B1 = ad::constant(ad::Tensor({hidden}, b1));
        const ad::Var W2 = ad::constant(ad::Tensor({hidden, 1}, w2));
        const ad::Var B2 = ad::constant(ad::Tensor({1}, std::vector<double>{b2}));
        return [=](const ad::Var& x) { return ad::matmul(ad::tanh(ad::matmul(x, W1) + B1), W2) + B2; };
    }

    // mean D(fake) - mean D(real) + lambda * mean (|grad D(x_hat)| - 1)^2, x_hat = e real + (1 - e) fake
    struct Terms {
        double critic_loss, gp_term, generator;
    };
    Terms wgan_gp(const std::vector<double>& real, const std::vector<double>& fake, const std::vector<double>& eps,
                  double lambda) const
    {
        const std::size_t S = eps.size();
        double dr = 0.0, df = 0.0, gp = 0.0;
        std::vector<double> xh(in);
        for (std::size_t s = 0; s < S; ++s) {
            dr += score(&real[s * in]);
            df += score(&fake[s * in]);
            for (std::size_t i = 0; i < in; ++i)
                xh[i] = eps[s] * real[s * in + i] + (1.0 - eps[s]) * fake[s * in + i];
            const auto g = input_gradient(xh.data());
            double n2 = 0.0;
            for (double v : g)
                n2 += v * v;
            gp += (std::sqrt(n2) - 1.0) * (std::sqrt(n2) - 1.0);
        }
        const double n = static_cast<double>(S);
        return {df / n - dr / n + lambda * gp / n, lambda * gp / n, -df / n};
    }
};

using CompositeFn = std::function<aps::CompositeLoss(const aps::ad::Var& mask_recon)>;

// True when no change to mask_recon at an unmasked joint moves l_mask. `mask_joints` is [..., 1].
inline bool mask_term_is_local(const CompositeFn& f, const aps::ad::Tensor& mask_recon,
                               const aps::ad::Tensor& mask_joints, std::uint64_t seed)
{
    namespace ad = aps::ad;
    const double base = f(ad::constant(mask_recon)).l_mask.item();
    aps::CounterRng rng(seed, "fixture.locality");
    for (std::size_t j = 0; j < mask_joints.size(); ++j) {
        if (mask_joints[j] != 0.0)
            continue;
        ad::Tensor moved = mask_recon;
        for (std::size_t k = 0; k < 3; ++k)
            moved[j * 3 + k] += rng.uniform(-100.0, 100.0);
        if (f(ad::constant(moved)).l_mask.item() != base)
            return false;
    }
    return true;
}

} // namespace fixtures
