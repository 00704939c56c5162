#pragma once

// Training losses: the composite prediction / masked-reconstruction / denoising loss, the WGAN-GP
// critic loss with its gradient penalty, and the weighted generator total.

#include <aps/autodiff/var.hpp>
#include <aps/error.hpp>
#include <aps/rng.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace aps {

namespace ad = aps::ad;

struct LossWeights {
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.1;
    double lambda = 10.0;

    void validate() const
    {
        for (double w : {alpha1, alpha2, beta1, beta2, lambda})
            if (!(w >= 0.0))
                fail(ErrorCode::InvalidArgument, "loss weights must be non-negative");
    }
};

struct LossReport {
    double l_pred = 0.0;
    double l_mask = 0.0;
    double l_denoise = 0.0;
    double l_composite = 0.0;
    double l_adv = 0.0;
    double gp_term = 0.0;
    double l_total = 0.0;
};

struct CompositeLoss {
    ad::Var l_pred;
    ad::Var l_mask;
    ad::Var l_denoise;
    ad::Var l_composite;
    std::size_t masked_joints = 0;
    bool mask_term_skipped = false;
};

/// Squared joint error ||a - b||^2 per joint: [..., 3] -> [..., 1].
inline ad::Var joint_sq_error(const ad::Var& a, const ad::Var& b)
{
    if (a.shape() != b.shape())
        fail(ErrorCode::ShapeMismatch, "shape mismatch " + ad::shape_string(a.shape()) + " vs " +
                                           ad::shape_string(b.shape()));
    ad::Var d = a - b;
    return ad::sum_last(d * d);
}

/// l_pred averages over every future joint; l_mask over joints in `mask_joints` (1 where any
/// coordinate of that joint-frame was masked); l_denoise over every observed joint. An empty mask
/// makes the mask term 0 and sets mask_term_skipped when alpha1 > 0.
inline CompositeLoss loss_composite(const ad::Var& pred, const ad::Var& mask_recon, const ad::Var& denoise_recon,
                                    const ad::Var& future_target, const ad::Var& observed_target,
                                    const ad::Tensor& mask_joints, const LossWeights& w)
{
    w.validate();
    CompositeLoss out;
    out.l_pred = ad::mean_all(joint_sq_error(pred, future_target));
    out.l_denoise = ad::mean_all(joint_sq_error(denoise_recon, observed_target));

    ad::Var recon_err = joint_sq_error(mask_recon, observed_target);
    if (mask_joints.shape() != recon_err.shape())
        fail(ErrorCode::ShapeMismatch, "mask joint indicator has shape " + ad::shape_string(mask_joints.shape()) +
                                           ", expected " + ad::shape_string(recon_err.shape()));
    std::size_t count = 0;
    for (double v : mask_joints.values())
        count += v != 0.0;
    out.masked_joints = count;
    if (count == 0) {
        out.l_mask = ad::constant(ad::Tensor::scalar(0.0));
        out.mask_term_skipped = w.alpha1 > 0.0;
    } else {
        out.l_mask = ad::scale(ad::sum_all(recon_err * ad::constant(mask_joints)), 1.0 / static_cast<double>(count));
    }
    out.l_composite = out.l_pred + ad::scale(out.l_mask, w.alpha1) + ad::scale(out.l_denoise, w.alpha2);
    return out;
}

/// x_hat = eps * real + (1 - eps) * fake with one eps per sample (leading axis).
inline ad::Tensor interpolate_samples(const ad::Tensor& real, const ad::Tensor& fake, const std::vector<double>& eps)
{
    if (real.shape() != fake.shape() || real.dim() == 0)
        fail(ErrorCode::ShapeMismatch, "interpolation needs matching real and fake batches");
    const std::size_t S = real.extent(0);
    if (eps.size() != S)
        fail(ErrorCode::ShapeMismatch, "need one interpolation weight per sample");
    const std::size_t per = real.size() / S;
    ad::Tensor out(real.shape());
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < per; ++i)
            out[s * per + i] = eps[s] * real[s * per + i] + (1.0 - eps[s]) * fake[s * per + i];
    return out;
}

inline std::vector<double> draw_interpolation_weights(std::size_t samples, std::uint64_t rng_seed)
{
    CounterRng rng(rng_seed);
    std::vector<double> eps(samples);
    for (auto& e : eps)
        e = rng.uniform();
    return eps;
}

inline ad::Tensor interpolate_samples(const ad::Tensor& real, const ad::Tensor& fake, std::uint64_t rng_seed)
{
    return interpolate_samples(real, fake, draw_interpolation_weights(real.dim() ? real.extent(0) : 0, rng_seed));
}

/// Scores a batch of samples [S, F] -> [S, 1].
using Critic = std::function<ad::Var(const ad::Var&)>;

struct AdversarialTerms {
    ad::Var critic_loss; // E[D(fake)] - E[D(real)] + gp
    ad::Var gp_term;     // lambda * E[(||grad D(x_hat)|| - 1)^2]
    ad::Var generator;   // -E[D(fake)]
};

/// WGAN-GP terms for one critic. The penalty gradient is taken with create_graph, so critic_loss
/// can be differentiated with respect to the critic's parameters.
inline AdversarialTerms loss_adversarial(const Critic& critic, const ad::Var& real, const ad::Var& fake,
                                         double lambda, const std::vector<double>& eps)
{
    if (real.shape() != fake.shape())
        fail(ErrorCode::ShapeMismatch, "real and fake batches differ in shape");
    AdversarialTerms out;
    ad::Var d_real = critic(real);
    ad::Var d_fake = critic(fake);

    ad::Var x_hat;
    ad::Var d_hat;
    ad::Var input_grad;
    {
        ad::GradModeGuard record(true);
        if (!real.requires_grad() && !fake.requires_grad()) {
            x_hat = ad::parameter(interpolate_samples(real.value(), fake.value(), eps));
        } else {
            // Differentiable interpolate, so the penalty also carries gradient into its inputs.
            if (real.dim() == 0 || eps.size() != real.extent(0))
                fail(ErrorCode::ShapeMismatch, "need one interpolation weight per sample");
            ad::Shape es(real.dim(), 1);
            es[0] = eps.size();
            ad::Tensor e(es), one_minus(es);
            for (std::size_t s = 0; s < eps.size(); ++s) {
                e[s] = eps[s];
                one_minus[s] = 1.0 - eps[s];
            }
            x_hat = ad::constant(e) * real + ad::constant(one_minus) * fake;
        }
        d_hat = critic(x_hat);
        if (d_hat.requires_grad())
            input_grad = ad::grad(ad::sum_all(d_hat), {x_hat}, {.create_graph = true})[0];
        else
            input_grad = ad::constant(ad::Tensor(x_hat.shape(), 0.0));
    }
    ad::Var norms = ad::sqrt_safe(ad::sum_last(input_grad * input_grad));
    for (double n : norms.value().values())
        if (!std::isfinite(n))
            fail(ErrorCode::NumericalInstability, "non-finite critic input-gradient norm");
    ad::Var dev = ad::add_scalar(norms, -1.0);
    out.gp_term = ad::scale(ad::mean_all(dev * dev), lambda);
    out.critic_loss = ad::mean_all(d_fake) - ad::mean_all(d_real) + out.gp_term;
    out.generator = -ad::mean_all(d_fake);
    return out;
}

inline AdversarialTerms loss_adversarial(const Critic& critic, const ad::Var& real, const ad::Var& fake,
                                         double lambda, std::uint64_t rng_seed)
{
    return loss_adversarial(critic, real, fake, lambda,
                            draw_interpolation_weights(real.dim() ? real.extent(0) : 0, rng_seed));
}

inline double loss_total(double l_composite, double l_adv, const LossWeights& w)
{
    return w.beta1 * l_composite + w.beta2 * l_adv;
}

inline double loss_total(const LossReport& report, const LossWeights& w)
{
    return loss_total(report.l_composite, report.l_adv, w);
}

inline ad::Var loss_total(const ad::Var& l_composite, const ad::Var& l_adv, const LossWeights& w)
{
    return ad::scale(l_composite, w.beta1) + ad::scale(l_adv, w.beta2);
}

} // namespace aps
