#pragma once

// Spatio-temporal predictor: per-coordinate embedding with a learnable mask token, L blocks of
// decoupled low-rank spatial and temporal attention with learnable gates, three linear task heads,
// and two MLP Wasserstein critics (single-frame fidelity, consecutive-pair continuity).

#include <aps/autodiff/var.hpp>
#include <aps/config.hpp>
#include <aps/error.hpp>
#include <aps/perturbation.hpp>
#include <aps/rng.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace aps {

namespace ad = aps::ad;

enum class ParamGroup { Generator, Critic };

struct NamedParam {
    std::string name;
    ad::Var var;
    ParamGroup group;
};

/// All learnable arrays in a fixed order. The flat index concatenates them in that order.
class ModelParams {
public:
    const std::vector<NamedParam>& entries() const { return entries_; }
    std::vector<NamedParam>& entries() { return entries_; }

    const ad::Var& operator[](const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end())
            fail(ErrorCode::InvalidArgument, "no parameter named " + name);
        return entries_[it->second].var;
    }

    ad::Var& at(const std::string& name)
    {
        auto it = index_.find(name);
        if (it == index_.end())
            fail(ErrorCode::InvalidArgument, "no parameter named " + name);
        return entries_[it->second].var;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    void add(std::string name, ad::Tensor value, ParamGroup group)
    {
        index_[name] = entries_.size();
        entries_.push_back({std::move(name), ad::parameter(std::move(value)), group});
    }

    std::vector<ad::Var> vars(ParamGroup group) const
    {
        std::vector<ad::Var> out;
        for (const auto& e : entries_)
            if (e.group == group)
                out.push_back(e.var);
        return out;
    }

    std::vector<ad::Var> vars() const
    {
        std::vector<ad::Var> out;
        for (const auto& e : entries_)
            out.push_back(e.var);
        return out;
    }

    std::size_t size() const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            n += e.var.value().size();
        return n;
    }

    std::size_t size(ParamGroup group) const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.group == group)
                n += e.var.value().size();
        return n;
    }

    std::vector<double> flatten() const
    {
        std::vector<double> out;
        out.reserve(size());
        for (const auto& e : entries_)
            out.insert(out.end(), e.var.value().values().begin(), e.var.value().values().end());
        return out;
    }

    void unflatten(const std::vector<double>& flat)
    {
        if (flat.size() != size())
            fail(ErrorCode::DimsMismatch, "flat parameter vector has " + std::to_string(flat.size()) +
                                              " entries, model has " + std::to_string(size()));
        std::size_t off = 0;
        for (auto& e : entries_) {
            auto dst = e.var.mutable_value().values();
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
            off += dst.size();
        }
    }

    /// (entry, element) for a flat index.
    std::pair<std::size_t, std::size_t> locate(std::size_t flat) const
    {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const std::size_t n = entries_[i].var.value().size();
            if (flat < n)
                return {i, flat};
            flat -= n;
        }
        fail(ErrorCode::InvalidArgument, "flat parameter index out of range");
    }

    bool all_finite() const
    {
        for (const auto& e : entries_)
            for (double v : e.var.value().values())
                if (!std::isfinite(v))
                    return false;
        return true;
    }

private:
    std::vector<NamedParam> entries_;
    std::map<std::string, std::size_t> index_;
};

namespace detail {

inline ad::Tensor uniform_tensor(ad::Shape shape, std::size_t fan_in, CounterRng& rng)
{
    ad::Tensor t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t.values())
        v = rng.uniform(-bound, bound);
    return t;
}

inline ad::Tensor identity(std::size_t n)
{
    ad::Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i)
        t[i * n + i] = 1.0;
    return t;
}

} // namespace detail

/// Weights uniform in +-sqrt(1/fan_in), biases zero, gates identity, mask token zero,
/// layer-norm gain one.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed)
{
    dims.validate();
    CounterRng rng(seed, "init");
    ModelParams p;
    const std::size_t D = dims.d_model, dh = dims.head_dim(), F = dims.ffn_width();
    const auto G = ParamGroup::Generator;
    auto weight = [&](const std::string& name, std::size_t in, std::size_t out, ParamGroup g = ParamGroup::Generator) {
        p.add(name, detail::uniform_tensor({in, out}, in, rng), g);
    };
    auto zeros = [&](const std::string& name, std::size_t n, ParamGroup g = ParamGroup::Generator) {
        p.add(name, ad::Tensor({n}, 0.0), g);
    };
    auto ones = [&](const std::string& name, std::size_t n) { p.add(name, ad::Tensor({n}, 1.0), G); };

    weight("embed.w", dims.channels, D);
    zeros("embed.b", D);
    zeros("mask_token", D);
    p.add("embed.time", detail::uniform_tensor({dims.window, 1, D}, D, rng), G);
    p.add("embed.joint", detail::uniform_tensor({dims.joints, D}, D, rng), G);

    for (std::size_t l = 0; l < dims.layers; ++l) {
        const std::string L = "layer" + std::to_string(l) + ".";
        auto attention = [&](const std::string& m, std::size_t gate) {
            ones(L + m + ".ln_g", D);
            zeros(L + m + ".ln_b", D);
            weight(L + m + ".wq", D, D);
            weight(L + m + ".wk", D, D);
            weight(L + m + ".wv", D, D);
            if (dims.lowrank) {
                weight(L + m + ".eq", dh, dims.rank);
                weight(L + m + ".ek", dh, dims.rank);
                p.add(L + m + ".gate", detail::identity(gate), G);
            }
            weight(L + m + ".wo", D, D);
            zeros(L + m + ".bo", D);
        };
        if (dims.lowrank) {
            attention("spatial", dims.joints);
            attention("temporal", dims.window);
        } else {
            attention("joint", 0);
        }
        ones(L + "ffn.ln_g", D);
        zeros(L + "ffn.ln_b", D);
        weight(L + "ffn.w1", D, F);
        zeros(L + "ffn.b1", F);
        weight(L + "ffn.w2", F, D);
        zeros(L + "ffn.b2", D);
    }

    weight("head.pred.w", dims.window * D, dims.future * 3);
    zeros("head.pred.b", dims.future * 3);
    weight("head.mask.w", D, 3);
    zeros("head.mask.b", 3);
    weight("head.denoise.w", D, 3);
    zeros("head.denoise.b", 3);

    const auto C = ParamGroup::Critic;
    const std::size_t H = dims.critic_width;
    auto mlp = [&](const std::string& m, std::size_t in) {
        weight(m + ".w1", in, H, C);
        zeros(m + ".b1", H, C);
        weight(m + ".w2", H, H, C);
        zeros(m + ".b2", H, C);
        weight(m + ".w3", H, 1, C);
        zeros(m + ".b3", 1, C);
    };
    mlp("critic.fidelity", 3 * dims.joints);
    mlp("critic.continuity", 6 * dims.joints);
    return p;
}

/// Network input: features with corrupted entries zeroed plus the per-token corrupted fraction.
struct NetworkInput {
    ad::Tensor values;   // [B, T, J, C]
    ad::Tensor fraction; // [B, T, J, 1]

    std::size_t batch() const { return values.extent(0); }
};

inline NetworkInput make_input(const std::vector<const FeatureTensor*>& features,
                               const std::vector<const CorruptionMask*>& masks = {})
{
    if (features.empty())
        fail(ErrorCode::DimsMismatch, "empty network input");
    const auto& f0 = *features.front();
    const std::size_t B = features.size(), T = f0.frames, J = f0.joints, C = f0.channels;
    NetworkInput in{ad::Tensor({B, T, J, C}), ad::Tensor({B, T, J, 1})};
    for (std::size_t b = 0; b < B; ++b) {
        const auto& f = *features[b];
        if (!f.same_shape(f0))
            fail(ErrorCode::DimsMismatch, "batch items differ in shape");
        const CorruptionMask* m = masks.empty() ? nullptr : masks[b];
        if (m && (m->frames != T || m->joints != J || m->channels != C))
            fail(ErrorCode::DimsMismatch, "mask shape does not match features");
        for (std::size_t tj = 0; tj < T * J; ++tj) {
            std::size_t hit = 0;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = tj * C + c;
                const bool masked = m && m->flags[i];
                in.values[b * T * J * C + i] = masked ? 0.0 : f.data[i];
                hit += masked;
            }
            in.fraction[b * T * J + tj] = static_cast<double>(hit) / static_cast<double>(C);
        }
    }
    return in;
}

struct Activation {
    ad::Var hidden; // [B, T, J, D]

    bool cached() const { return hidden.defined(); }
};

/// Linear embedding of each token's channels plus learned time and joint embeddings. A token with
/// corrupted fraction f has its content replaced by (1 - f) * (W x + b) + f * mask_token, so a fully
/// corrupted token carries exactly the mask token and corrupted raw values never reach the network.
inline Activation embed(const NetworkInput& input, const ModelParams& params, const ModelDims& dims)
{
    const auto& s = input.values.shape();
    if (s.size() != 4 || s[1] != dims.window || s[2] != dims.joints || s[3] != dims.channels)
        fail(ErrorCode::DimsMismatch, "input shape " + ad::shape_string(s) + " does not match model dims");
    ad::Var x = ad::constant(input.values);
    ad::Var frac = ad::constant(input.fraction);
    ad::Tensor keep_t = input.fraction;
    for (auto& v : keep_t.values())
        v = 1.0 - v;
    ad::Var keep = ad::constant(std::move(keep_t));
    ad::Var lin = ad::matmul(x, params["embed.w"]) + params["embed.b"];
    return {keep * lin + frac * params["mask_token"] + params["embed.time"] + params["embed.joint"]};
}

inline ad::Var layer_norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias, double eps = 1e-5)
{
    ad::Var centered = x - ad::mean_last(x);
    ad::Var var = ad::mean_last(centered * centered);
    return centered * ad::pow_scalar(ad::add_scalar(var, eps), -0.5) * gain + bias;
}

/// Intermediates of one low-rank attention call, exposed for inspection.
struct AttentionTrace {
    ad::Var phi_q;  // [P, H, N, r], softmax over rank
    ad::Var phi_kt; // [P, H, r, N], softmax over tokens
    ad::Var mixed;  // [P, H, N, dh], phi(Q) (phi(K)^T V) before the gate
    ad::Var gated;  // [P, H, N, dh], gate * mixed
    ad::Var output; // [..., N, D], after head concat and output projection
};

/// Low-rank gated attention over the second-to-last axis of x [..., N, D]:
/// head = gate (phi(Q) (phi(K)^T V)), with phi(Q) = softmax_rank(Q E_q) and
/// phi(K)^T = softmax_tokens((K E_k)^T); heads are concatenated and projected by W_o.
inline AttentionTrace lowrank_attention(const ad::Var& x, const ModelParams& params, const std::string& prefix,
                                        const ModelDims& dims)
{
    const ad::Shape& s = x.shape();
    const std::size_t N = s[s.size() - 2], D = s.back();
    const std::size_t H = dims.heads, dh = dims.head_dim();
    const std::size_t P = x.value().size() / (N * D);
    auto split = [&](const ad::Var& y) {
        return ad::permute(ad::reshape(y, {P, N, H, dh}), {0, 2, 1, 3}); // [P, H, N, dh]
    };
    ad::Var q = split(ad::matmul(x, params[prefix + ".wq"]));
    ad::Var k = split(ad::matmul(x, params[prefix + ".wk"]));
    ad::Var v = split(ad::matmul(x, params[prefix + ".wv"]));

    AttentionTrace tr;
    tr.phi_q = ad::softmax_last(ad::matmul(q, params[prefix + ".eq"]));
    tr.phi_kt = ad::softmax_last(ad::transpose_last(ad::matmul(k, params[prefix + ".ek"])));
    ad::Var context = ad::matmul(tr.phi_kt, v); // [P, H, r, dh]
    tr.mixed = ad::matmul(tr.phi_q, context);
    tr.gated = ad::matmul(params[prefix + ".gate"], tr.mixed);
    ad::Var merged = ad::reshape(ad::permute(tr.gated, {0, 2, 1, 3}), s);
    tr.output = ad::matmul(merged, params[prefix + ".wo"]) + params[prefix + ".bo"];
    return tr;
}

/// Attention across the joints of each frame: h [B, T, J, D] (or [J, D] for one frame).
inline AttentionTrace spatial_attention(const ad::Var& h, const ModelParams& params, std::size_t layer,
                                        const ModelDims& dims)
{
    if (layer >= dims.layers)
        fail(ErrorCode::DimsMismatch, "layer index out of range");
    return lowrank_attention(h, params, "layer" + std::to_string(layer) + ".spatial", dims);
}

/// Attention across time for each joint: h_j [B, J, T, D] (or [T, D] for one joint).
inline AttentionTrace temporal_attention(const ad::Var& h, const ModelParams& params, std::size_t layer,
                                         const ModelDims& dims)
{
    if (layer >= dims.layers)
        fail(ErrorCode::DimsMismatch, "layer index out of range");
    return lowrank_attention(h, params, "layer" + std::to_string(layer) + ".temporal", dims);
}

/// Plain scaled dot-product attention over all T*J tokens of a sample (the ablation block).
inline ad::Var joint_attention(const ad::Var& h, const ModelParams& params, const std::string& prefix,
                               const ModelDims& dims)
{
    const ad::Shape s = h.shape();
    const std::size_t B = s[0], N = s[1] * s[2], D = s[3];
    const std::size_t H = dims.heads, dh = dims.head_dim();
    ad::Var x = ad::reshape(h, {B, N, D});
    auto split = [&](const ad::Var& y) { return ad::permute(ad::reshape(y, {B, N, H, dh}), {0, 2, 1, 3}); };
    ad::Var q = split(ad::matmul(x, params[prefix + ".wq"]));
    ad::Var k = split(ad::matmul(x, params[prefix + ".wk"]));
    ad::Var v = split(ad::matmul(x, params[prefix + ".wv"]));
    ad::Var scores = ad::scale(ad::matmul(q, ad::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    ad::Var mixed = ad::matmul(ad::softmax_last(scores), v);
    ad::Var merged = ad::reshape(ad::permute(mixed, {0, 2, 1, 3}), s);
    return ad::matmul(merged, params[prefix + ".wo"]) + params[prefix + ".bo"];
}

inline ad::Var feed_forward(const ad::Var& x, const ModelParams& params, const std::string& prefix)
{
    ad::Var hidden = ad::gelu(ad::matmul(x, params[prefix + ".w1"]) + params[prefix + ".b1"]);
    return ad::matmul(hidden, params[prefix + ".w2"]) + params[prefix + ".b2"];
}

/// Pre-norm residual blocks: spatial attention, temporal attention, feed-forward.
inline Activation forward_backbone(const Activation& embedded, const ModelParams& params, const ModelDims& dims)
{
    ad::Var h = embedded.hidden;
    for (std::size_t l = 0; l < dims.layers; ++l) {
        const std::string L = "layer" + std::to_string(l) + ".";
        if (dims.lowrank) {
            ad::Var xs = layer_norm(h, params[L + "spatial.ln_g"], params[L + "spatial.ln_b"]);
            h = h + spatial_attention(xs, params, l, dims).output;
            ad::Var ht = ad::permute(h, {0, 2, 1, 3});
            ad::Var xt = layer_norm(ht, params[L + "temporal.ln_g"], params[L + "temporal.ln_b"]);
            ht = ht + temporal_attention(xt, params, l, dims).output;
            h = ad::permute(ht, {0, 2, 1, 3});
        } else {
            ad::Var xa = layer_norm(h, params[L + "joint.ln_g"], params[L + "joint.ln_b"]);
            h = h + joint_attention(xa, params, L + "joint", dims);
        }
        ad::Var xf = layer_norm(h, params[L + "ffn.ln_g"], params[L + "ffn.ln_b"]);
        h = h + feed_forward(xf, params, L + "ffn");
    }
    return {h};
}

inline Activation forward_backbone(const NetworkInput& input, const ModelParams& params, const ModelDims& dims)
{
    return forward_backbone(embed(input, params, dims), params, dims);
}

/// Raw (normalized-unit) head outputs.
struct HeadOutputs {
    ad::Var pred;    // [B, T_f, J, 3], from all observed tokens of each joint
    ad::Var mask;    // [B, T, J, 3]
    ad::Var denoise; // [B, T, J, 3]
};

inline ad::Var prediction_head(const Activation& act, const ModelParams& params, const ModelDims& dims)
{
    if (!act.cached())
        fail(ErrorCode::BackwardBeforeForward, "prediction head called without backbone activations");
    const auto& s = act.hidden.shape();
    const std::size_t B = s[0], T = s[1], J = s[2], D = s[3];
    ad::Var tokens = ad::reshape(ad::permute(act.hidden, {0, 2, 1, 3}), {B, J, T * D});
    ad::Var out = ad::matmul(tokens, params["head.pred.w"]) + params["head.pred.b"]; // [B, J, T_f*3]
    return ad::permute(ad::reshape(out, {B, J, dims.future, 3}), {0, 2, 1, 3});
}

inline ad::Var reconstruction_head(const Activation& act, const ModelParams& params, const std::string& which)
{
    return ad::matmul(act.hidden, params["head." + which + ".w"]) + params["head." + which + ".b"];
}

inline HeadOutputs heads(const Activation& act, const ModelParams& params, const ModelDims& dims)
{
    return {prediction_head(act, params, dims), reconstruction_head(act, params, "mask"),
            reconstruction_head(act, params, "denoise")};
}

inline ad::Var critic_mlp(const ad::Var& x, const ModelParams& params, const std::string& prefix)
{
    ad::Var h1 = ad::tanh(ad::matmul(x, params[prefix + ".w1"]) + params[prefix + ".b1"]);
    ad::Var h2 = ad::tanh(ad::matmul(h1, params[prefix + ".w2"]) + params[prefix + ".b2"]);
    return ad::matmul(h2, params[prefix + ".w3"]) + params[prefix + ".b3"];
}

/// frames [S, 3J] -> unbounded scores [S, 1].
inline ad::Var discriminate_fidelity(const ad::Var& frames, const ModelParams& params)
{
    return critic_mlp(frames, params, "critic.fidelity");
}

/// pairs [S, 6J] laid out as (frame t, frame t+1). The MLP sees (frame t, frame t+1 - frame t).
inline ad::Var discriminate_continuity(const ad::Var& pairs, const ModelParams& params)
{
    const std::size_t w = pairs.shape().back() / 2;
    ad::Var a = ad::slice(pairs, 1, 0, w);
    ad::Var b = ad::slice(pairs, 1, w, 2 * w);
    return critic_mlp(ad::concat(a, b - a, 1), params, "critic.continuity");
}

} // namespace aps
