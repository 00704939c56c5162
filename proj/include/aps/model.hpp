#pragma once

// Glue between motion windows and the network: input features (quotient or raw), training-set
// normalization, batched forward passes, and the generator / critic objectives of one step.
//
// Coordinate conventions: predictions are decoded as last observed pose + delta_scale * raw, in
// absolute millimeters. Reconstructions are root-aligned and decoded the same way around the
// root-aligned last observed pose. Critics see root-aligned poses as (pose - mean_pose) / coord_scale.

#include <aps/autodiff/var.hpp>
#include <aps/config.hpp>
#include <aps/dataio.hpp>
#include <aps/motion.hpp>
#include <aps/network.hpp>
#include <aps/objectives.hpp>
#include <aps/perturbation.hpp>
#include <aps/quotient.hpp>
#include <aps/rng.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace aps {

/// Raw input features of one observed window: [T_in, J, C].
/// Quotient features per (t, j): |v|, O_xy, O_yz, O_zx of v_t = p_{t+1} - p_t, then the
/// root-aligned last observed pose p1 (repeated over t). Raw features: root-aligned x, y, z.
inline FeatureTensor window_features(const std::vector<Pose>& observed, std::size_t root_index, bool quotient)
{
    if (observed.size() < 2)
        fail(ErrorCode::SequenceTooShort, "observed window needs at least 2 frames");
    const std::size_t J = observed.front().size();
    if (!quotient) {
        FeatureTensor f(observed.size(), J, 3);
        for (std::size_t t = 0; t < observed.size(); ++t) {
            const Pose a = root_align(observed[t], root_index);
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t k = 0; k < 3; ++k)
                    f(t, j, k) = a[j][k];
        }
        return f;
    }
    const MotionSequence seq(observed, 25.0, Skeleton(J, root_index));
    const QuotientRepresentation q = encode_quotient(seq);
    const Pose p1 = root_align(q.last_pose, root_index);
    FeatureTensor f(q.frames(), J, 7);
    for (std::size_t t = 0; t < q.frames(); ++t)
        for (std::size_t j = 0; j < J; ++j) {
            f(t, j, 0) = q.magnitudes(t, j);
            for (std::size_t k = 0; k < 3; ++k) {
                f(t, j, 1 + k) = q.cosines.omega(t, j)[k];
                f(t, j, 4 + k) = p1[j][k];
            }
        }
    return f;
}

/// Training-set statistics fixed at model creation.
struct Normalizer {
    std::vector<double> feature_mean; // per channel
    std::vector<double> feature_std;
    std::vector<double> mean_pose;    // J*3, root-aligned
    double coord_scale = 1.0;         // rms of root-aligned coordinates around mean_pose
    double delta_scale = 1.0;         // rms of future - last observed pose

    FeatureTensor standardize(FeatureTensor f) const
    {
        if (f.channels != feature_mean.size())
            fail(ErrorCode::DimsMismatch, "feature channels do not match the normalizer");
        for (std::size_t i = 0; i < f.size(); ++i) {
            const std::size_t c = i % f.channels;
            f.data[i] = (f.data[i] - feature_mean[c]) / feature_std[c];
        }
        return f;
    }

    bool operator==(const Normalizer&) const = default;
};

inline Normalizer fit_normalizer(const WindowedDataset& ds, bool quotient)
{
    if (ds.empty())
        fail(ErrorCode::InvalidArgument, "cannot fit a normalizer on an empty dataset");
    Normalizer n;
    const std::size_t C = quotient ? 7 : 3, J = ds.joints;
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    std::size_t count = 0;
    std::vector<FeatureTensor> feats;
    for (const auto& w : ds.windows) {
        feats.push_back(window_features(w.observed, ds.root_index, quotient));
        const auto& f = feats.back();
        for (std::size_t i = 0; i < f.size(); ++i)
            sum[i % C] += f.data[i];
        count += f.frames * f.joints;
    }
    n.feature_mean.resize(C);
    n.feature_std.resize(C);
    for (std::size_t c = 0; c < C; ++c)
        n.feature_mean[c] = sum[c] / static_cast<double>(count);
    for (const auto& f : feats)
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double d = f.data[i] - n.feature_mean[i % C];
            sq[i % C] += d * d;
        }
    for (std::size_t c = 0; c < C; ++c) {
        const double s = std::sqrt(sq[c] / static_cast<double>(count));
        n.feature_std[c] = s > 1e-8 ? s : 1.0;
    }

    n.mean_pose.assign(J * 3, 0.0);
    std::size_t poses = 0;
    auto each_pose = [&](auto&& fn) {
        for (const auto& w : ds.windows) {
            for (const auto& p : w.observed)
                fn(root_align(p, ds.root_index));
            for (const auto& p : w.future)
                fn(root_align(p, ds.root_index));
        }
    };
    each_pose([&](const Pose& p) {
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < 3; ++k)
                n.mean_pose[j * 3 + k] += p[j][k];
        ++poses;
    });
    for (auto& m : n.mean_pose)
        m /= static_cast<double>(poses);
    double acc = 0.0;
    each_pose([&](const Pose& p) {
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < 3; ++k) {
                const double d = p[j][k] - n.mean_pose[j * 3 + k];
                acc += d * d;
            }
    });
    const double cs = std::sqrt(acc / static_cast<double>(poses * J * 3));
    n.coord_scale = cs > 1e-8 ? cs : 1.0;

    double dacc = 0.0;
    std::size_t dcount = 0;
    for (const auto& w : ds.windows) {
        const Pose& last = w.observed.back();
        for (const auto& p : w.future)
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t k = 0; k < 3; ++k) {
                    const double d = p[j][k] - last[j][k];
                    dacc += d * d;
                    ++dcount;
                }
    }
    const double ds_ = std::sqrt(dacc / static_cast<double>(dcount));
    n.delta_scale = ds_ > 1e-8 ? ds_ : 1.0;
    return n;
}

struct Model {
    TrainConfig cfg;
    ModelDims dims;
    Normalizer norm;
    ModelParams params;
    std::size_t root_index = 0;
};

inline ModelParams clone_params(const ModelParams& p)
{
    ModelParams out;
    for (const auto& e : p.entries())
        out.add(e.name, e.var.value(), e.group);
    return out;
}

inline Model clone_model(const Model& m)
{
    Model out = m;
    out.params = clone_params(m.params);
    return out;
}

inline Model make_model(const TrainConfig& cfg, std::size_t joints, std::size_t root_index, Normalizer norm)
{
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.dims = cfg.dims(joints);
    m.norm = std::move(norm);
    m.params = init_params(m.dims, cfg.seed);
    m.root_index = root_index;
    return m;
}

namespace detail {

inline void put_pose(ad::Tensor& t, std::size_t offset, const Pose& p)
{
    for (std::size_t j = 0; j < p.size(); ++j)
        for (std::size_t k = 0; k < 3; ++k)
            t[offset + j * 3 + k] = p[j][k];
}

} // namespace detail

/// Everything the trainer needs from one window, computed once.
struct PreparedWindow {
    std::size_t id = 0;
    FeatureTensor features;     // standardized [T_in, J, C]
    ad::Tensor observed_target; // [T_in, J, 3], root-aligned frames the reconstruction heads target
    ad::Tensor last_raw;        // [1, J, 3]
    ad::Tensor last_aligned;    // [1, J, 3]
    ad::Tensor future_raw;      // [F, J, 3]
    ad::Tensor future_aligned;  // [F, J, 3]
};

inline PreparedWindow prepare_observed(const Model& m, const std::vector<Pose>& observed)
{
    if (observed.size() != m.cfg.observed)
        fail(ErrorCode::DimsMismatch, "observed window has " + std::to_string(observed.size()) +
                                          " frames, model expects " + std::to_string(m.cfg.observed));
    const std::size_t J = m.dims.joints;
    for (const auto& p : observed)
        if (p.size() != J)
            fail(ErrorCode::SkeletonMismatch, "observed pose joint count does not match the model");
    PreparedWindow w;
    w.features = m.norm.standardize(window_features(observed, m.root_index, m.cfg.flag_d));
    const std::size_t T = w.features.frames, first = m.cfg.flag_d ? 1 : 0;
    w.observed_target = ad::Tensor({T, J, 3});
    for (std::size_t t = 0; t < T; ++t)
        detail::put_pose(w.observed_target, t * J * 3, root_align(observed[first + t], m.root_index));
    w.last_raw = ad::Tensor({1, J, 3});
    detail::put_pose(w.last_raw, 0, observed.back());
    w.last_aligned = ad::Tensor({1, J, 3});
    detail::put_pose(w.last_aligned, 0, root_align(observed.back(), m.root_index));
    return w;
}

inline PreparedWindow prepare_window(const Model& m, const MotionWindow& win, std::size_t id)
{
    PreparedWindow w = prepare_observed(m, win.observed);
    w.id = id;
    const std::size_t F = m.dims.future, J = m.dims.joints;
    if (win.future.size() != F)
        fail(ErrorCode::DimsMismatch, "future window has " + std::to_string(win.future.size()) +
                                          " frames, model expects " + std::to_string(F));
    w.future_raw = ad::Tensor({F, J, 3});
    w.future_aligned = ad::Tensor({F, J, 3});
    for (std::size_t t = 0; t < F; ++t) {
        detail::put_pose(w.future_raw, t * J * 3, win.future[t]);
        detail::put_pose(w.future_aligned, t * J * 3, root_align(win.future[t], m.root_index));
    }
    return w;
}

inline std::vector<PreparedWindow> prepare_dataset(const Model& m, const WindowedDataset& ds)
{
    if (ds.joints != m.dims.joints)
        fail(ErrorCode::SkeletonMismatch, "dataset joint count does not match the model");
    std::vector<PreparedWindow> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out.push_back(prepare_window(m, ds.windows[i], i));
    return out;
}

/// One minibatch: B windows, plus their masked and noised copies when the auxiliary tasks are on.
struct StepBatch {
    std::size_t size = 0;
    bool auxiliary = false;
    NetworkInput input;         // [B or 3B, T, J, C]: clean, then masked, then noised
    ad::Tensor observed_target; // [B, T, J, 3]
    ad::Tensor mask_joints;     // [B, T, J, 1]
    ad::Tensor last_raw;        // [B, 1, J, 3]
    ad::Tensor last_aligned;    // [B, 1, J, 3]
    ad::Tensor future_raw;      // [B, F, J, 3]
    ad::Tensor real_window;     // [B, F+1, J, 3], normalized critic coordinates
    std::vector<PerturbedBatch> corruption;
};

namespace detail {

inline ad::Tensor stack(const std::vector<const ad::Tensor*>& parts)
{
    ad::Shape s = parts.front()->shape();
    s.insert(s.begin(), parts.size());
    ad::Tensor out(s);
    const std::size_t n = parts.front()->size();
    for (std::size_t b = 0; b < parts.size(); ++b)
        std::copy(parts[b]->data(), parts[b]->data() + n, out.data() + b * n);
    return out;
}

inline ad::Tensor normalized_window(const Model& m, const ad::Tensor& last_aligned, const ad::Tensor& future_aligned)
{
    const std::size_t J = m.dims.joints, F = future_aligned.extent(0);
    ad::Tensor out({F + 1, J, 3});
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = i < J * 3 ? last_aligned[i] : future_aligned[i - J * 3];
        out[i] = (x - m.norm.mean_pose[i % (J * 3)]) / m.norm.coord_scale;
    }
    return out;
}

} // namespace detail

/// `seeds[i]` drives the corruption of window i (ignored when the auxiliary tasks are off).
inline StepBatch make_step_batch(const Model& m, const std::vector<const PreparedWindow*>& windows,
                                 const std::vector<std::uint64_t>& seeds)
{
    if (windows.empty())
        fail(ErrorCode::InvalidArgument, "empty batch");
    if (seeds.size() != windows.size())
        fail(ErrorCode::InvalidArgument, "need one corruption seed per window");
    StepBatch b;
    b.size = windows.size();
    b.auxiliary = m.cfg.flag_e;
    std::vector<const FeatureTensor*> feats;
    std::vector<const CorruptionMask*> masks;
    for (const auto* w : windows) {
        feats.push_back(&w->features);
        masks.push_back(nullptr);
    }
    const std::size_t B = b.size, T = m.dims.window, J = m.dims.joints;
    b.mask_joints = ad::Tensor({B, T, J, 1});
    if (b.auxiliary) {
        b.corruption.reserve(B);
        for (std::size_t i = 0; i < B; ++i)
            b.corruption.push_back(build_batch(windows[i]->features, m.cfg, seeds[i]));
        for (const auto& c : b.corruption) {
            feats.push_back(&c.masked.values);
            masks.push_back(&c.masked.mask);
        }
        for (const auto& c : b.corruption) {
            feats.push_back(&c.noised.values);
            masks.push_back(nullptr);
        }
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < J; ++j)
                    b.mask_joints[(i * T + t) * J + j] = b.corruption[i].masked.mask.joint_hit(t, j) ? 1.0 : 0.0;
    }
    b.input = make_input(feats, masks);

    // observation-only windows (inference) carry no future
    const bool has_future = !windows.front()->future_raw.shape().empty();
    std::vector<const ad::Tensor*> obs, lr, la, fr;
    std::vector<ad::Tensor> real;
    real.reserve(B);
    for (const auto* w : windows) {
        if (w->future_raw.shape().empty() == has_future)
            fail(ErrorCode::InvalidArgument, "batch mixes windows with and without future frames");
        obs.push_back(&w->observed_target);
        lr.push_back(&w->last_raw);
        la.push_back(&w->last_aligned);
        if (has_future) {
            fr.push_back(&w->future_raw);
            real.push_back(detail::normalized_window(m, w->last_aligned, w->future_aligned));
        }
    }
    b.observed_target = detail::stack(obs);
    b.last_raw = detail::stack(lr);
    b.last_aligned = detail::stack(la);
    if (has_future) {
        std::vector<const ad::Tensor*> rp;
        for (const auto& r : real)
            rp.push_back(&r);
        b.future_raw = detail::stack(fr);
        b.real_window = detail::stack(rp);
    }
    return b;
}

struct DecodedOutputs {
    ad::Var pred;          // [B, F, J, 3] absolute mm
    ad::Var mask_recon;    // [B, T, J, 3] root-aligned mm (auxiliary only)
    ad::Var denoise_recon; // [B, T, J, 3] root-aligned mm (auxiliary only)
};

inline ad::Var mean_pose_var(const Model& m)
{
    return ad::constant(ad::Tensor({m.dims.joints, 3}, m.norm.mean_pose));
}

inline DecodedOutputs generate(const Model& m, const StepBatch& b, bool prediction_only = false)
{
    const std::size_t B = b.size;
    NetworkInput in = b.input;
    if (prediction_only && in.batch() != B) {
        const std::size_t per = in.values.size() / in.batch(), fper = in.fraction.size() / in.batch();
        ad::Shape vs = in.values.shape(), fs = in.fraction.shape();
        vs[0] = fs[0] = B;
        in.values = ad::Tensor(vs, std::vector<double>(in.values.data(), in.values.data() + B * per));
        in.fraction = ad::Tensor(fs, std::vector<double>(in.fraction.data(), in.fraction.data() + B * fper));
    }
    const Activation act = forward_backbone(in, m.params, m.dims);
    const std::size_t n = in.batch();
    DecodedOutputs out;
    Activation clean{n == B ? act.hidden : ad::slice(act.hidden, 0, 0, B)};
    ad::Var raw = prediction_head(clean, m.params, m.dims);
    out.pred = ad::constant(b.last_raw) + ad::scale(raw, m.norm.delta_scale);
    if (n == 3 * B) {
        const ad::Var anchor = ad::constant(b.last_aligned);
        Activation masked{ad::slice(act.hidden, 0, B, 2 * B)};
        Activation noised{ad::slice(act.hidden, 0, 2 * B, 3 * B)};
        out.mask_recon = anchor + ad::scale(reconstruction_head(masked, m.params, "mask"), m.norm.delta_scale);
        out.denoise_recon = anchor + ad::scale(reconstruction_head(noised, m.params, "denoise"), m.norm.delta_scale);
    }
    return out;
}

/// Absolute-mm prediction [B, F, J, 3] -> normalized critic window [B, F+1, J, 3] that starts at the
/// last observed pose.
inline ad::Var critic_window(const Model& m, const ad::Var& pred, const StepBatch& b)
{
    const std::size_t r = m.root_index;
    ad::Var aligned = pred - ad::slice(pred, 2, r, r + 1);
    ad::Var window = ad::concat(ad::constant(b.last_aligned), aligned, 1);
    return ad::scale(window - mean_pose_var(m), 1.0 / m.norm.coord_scale);
}

/// Window [B, F+1, J, 3] -> single frames [B*F, 3J] (the future part).
inline ad::Var fidelity_rows(const ad::Var& window)
{
    const auto& s = window.shape();
    const std::size_t B = s[0], F = s[1] - 1, W = s[2] * 3;
    return ad::reshape(ad::slice(window, 1, 1, F + 1), {B * F, W});
}

/// Window [B, F+1, J, 3] -> consecutive pairs [B*F, 6J], the first pair straddling the seam.
inline ad::Var continuity_rows(const ad::Var& window)
{
    const auto& s = window.shape();
    const std::size_t B = s[0], F = s[1] - 1, W = s[2] * 3;
    ad::Var a = ad::reshape(ad::slice(window, 1, 0, F), {B, F, W});
    ad::Var c = ad::reshape(ad::slice(window, 1, 1, F + 1), {B, F, W});
    return ad::reshape(ad::concat(a, c, 2), {B * F, 2 * W});
}

inline LossWeights loss_weights(const TrainConfig& cfg)
{
    return {cfg.alpha1, cfg.alpha2, cfg.beta1, cfg.beta2, cfg.lambda};
}

struct GeneratorTerms {
    CompositeLoss composite;
    ad::Var l_adv; // -E[D_f(fake)] - E[D_c(fake)]
    ad::Var total;
    ad::Var pred;
};

inline GeneratorTerms generator_objective(const Model& m, const StepBatch& b)
{
    const LossWeights w = loss_weights(m.cfg);
    DecodedOutputs out = generate(m, b, !b.auxiliary);
    GeneratorTerms g;
    g.pred = out.pred;
    const ad::Var future = ad::constant(b.future_raw);
    if (b.auxiliary) {
        g.composite = loss_composite(out.pred, out.mask_recon, out.denoise_recon, future,
                                     ad::constant(b.observed_target), b.mask_joints, w);
    } else {
        g.composite.l_pred = ad::mean_all(joint_sq_error(out.pred, future));
        g.composite.l_mask = ad::constant(ad::Tensor::scalar(0.0));
        g.composite.l_denoise = ad::constant(ad::Tensor::scalar(0.0));
        g.composite.l_composite = g.composite.l_pred + ad::scale(g.composite.l_mask, w.alpha1) +
                                  ad::scale(g.composite.l_denoise, w.alpha2);
    }
    const ad::Var window = critic_window(m, out.pred, b);
    g.l_adv = -ad::mean_all(discriminate_fidelity(fidelity_rows(window), m.params)) -
              ad::mean_all(discriminate_continuity(continuity_rows(window), m.params));
    g.total = loss_total(g.composite.l_composite, g.l_adv, w);
    return g;
}

struct CriticTerms {
    ad::Var loss;    // summed over both critics
    ad::Var gp_term; // summed over both critics
};

/// `fake_window` is usually detached; passing a live one lets gradients reach the generator too.
inline CriticTerms critic_objective(const Model& m, const StepBatch& b, const ad::Var& fake_window,
                                    std::uint64_t eps_seed)
{
    const ad::Var real = ad::constant(b.real_window);
    const Critic fidelity = [&](const ad::Var& x) { return discriminate_fidelity(x, m.params); };
    const Critic continuity = [&](const ad::Var& x) { return discriminate_continuity(x, m.params); };
    const AdversarialTerms f = loss_adversarial(fidelity, fidelity_rows(real), fidelity_rows(fake_window),
                                                m.cfg.lambda, derive_key(eps_seed, "fidelity"));
    const AdversarialTerms c = loss_adversarial(continuity, continuity_rows(real), continuity_rows(fake_window),
                                                m.cfg.lambda, derive_key(eps_seed, "continuity"));
    return {f.critic_loss + c.critic_loss, f.gp_term + c.gp_term};
}

/// Predicted absolute poses for each window of the batch.
inline ad::Tensor predict_batch(const Model& m, const StepBatch& b)
{
    ad::NoGradGuard no_grad;
    return generate(m, b, true).pred.value();
}

inline std::vector<Pose> predict(const Model& m, const std::vector<Pose>& observed)
{
    const PreparedWindow w = prepare_observed(m, observed);
    Model view = m;
    view.cfg.flag_e = false;
    const StepBatch b = make_step_batch(view, {&w}, {0});
    const ad::Tensor pred = predict_batch(view, b);
    const std::size_t F = m.dims.future, J = m.dims.joints;
    std::vector<Pose> out(F, Pose(J));
    for (std::size_t t = 0; t < F; ++t)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < 3; ++k)
                out[t][j][k] = pred[(t * J + j) * 3 + k];
    return out;
}

/// Mean l_pred over all windows with the current parameters and clean inputs.
inline double dataset_l_pred(const Model& m, const std::vector<PreparedWindow>& windows)
{
    if (windows.empty())
        fail(ErrorCode::InvalidArgument, "empty dataset");
    Model view = m;
    view.cfg.flag_e = false;
    double total = 0.0;
    for (std::size_t lo = 0; lo < windows.size(); lo += m.cfg.batch_size) {
        const std::size_t hi = std::min(windows.size(), lo + m.cfg.batch_size);
        std::vector<const PreparedWindow*> part;
        for (std::size_t i = lo; i < hi; ++i)
            part.push_back(&windows[i]);
        const StepBatch b = make_step_batch(view, part, std::vector<std::uint64_t>(part.size(), 0));
        const ad::Tensor pred = predict_batch(view, b);
        for (std::size_t i = 0; i < pred.size(); i += 3) {
            double sq = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                const double d = pred[i + k] - b.future_raw[i + k];
                sq += d * d;
            }
            total += sq;
        }
    }
    return total / static_cast<double>(windows.size() * m.dims.future * m.dims.joints);
}

} // namespace aps
