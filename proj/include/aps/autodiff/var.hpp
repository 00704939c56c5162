#pragma once

// Reverse-mode differentiation over dense tensors.
//
// Every backward rule is written with the same differentiable operations it differentiates, so
// grad(..., create_graph = true) returns gradients that are themselves part of a graph and can be
// differentiated again (needed for input-gradient penalties).

#include <aps/autodiff/tensor.hpp>
#include <aps/error.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace aps::ad {

class Var;

using BackwardFn =
    std::function<std::vector<Var>(const std::vector<Var>& inputs, const Var& out, const Var& grad)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    const char* op = "leaf";
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t extent(std::size_t axis) const { return node_->value.extent(axis); }
    std::size_t dim() const { return node_->value.dim(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return !node_->backward; }
    double item() const { return node_->value.item(); }
    const std::shared_ptr<Node>& node() const { return node_; }
    const char* op() const { return node_->op; }

private:
    std::shared_ptr<Node> node_;
};

inline bool& grad_mode_flag()
{
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled) : previous_(grad_mode_flag()) { grad_mode_flag() = enabled; }
    ~GradModeGuard() { grad_mode_flag() = previous_; }
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool previous_;
};

struct NoGradGuard : GradModeGuard {
    NoGradGuard() : GradModeGuard(false) {}
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }
inline Var detach(const Var& v) { return Var(v.value(), false); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* name)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = name;
    if (grad_enabled()) {
        bool any = false;
        for (const auto& in : inputs)
            any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const auto& in : inputs)
                node->parents.push_back(in.node());
            node->backward = std::move(backward);
        }
    }
    return Var(std::move(node));
}

template <class Fn>
Tensor binary_values(const Tensor& a, const Tensor& b, Fn&& f)
{
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = f(a[i], b[i]);
        return out;
    }
    const Shape shape = broadcast_shape(a.shape(), b.shape());
    Tensor out(shape);
    const auto sa = broadcast_strides(a.shape(), shape);
    const auto sb = broadcast_strides(b.shape(), shape);
    const std::size_t r = shape.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(a[ia], b[ib]);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < shape[d])
                break;
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    return out;
}

template <class Fn>
Tensor unary_values(const Tensor& a, Fn&& f)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = f(a[i]);
    return out;
}

// Splits a shape around `axis` into (outer, extent, inner).
inline std::tuple<std::size_t, std::size_t, std::size_t> axis_split(const Shape& s, std::size_t axis)
{
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
    return {outer, s[axis], inner};
}

} // namespace detail

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var reduce_to(const Var& x, const Shape& shape);
Var expand(const Var& x, const Shape& shape);
Var matmul(const Var& a, const Var& b);
Var transpose_last(const Var& x);
Var reshape(const Var& x, Shape shape);
Var sum_last(const Var& x);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var pad_slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t full);
Var pow_scalar(const Var& x, double p);

/// Sums over broadcast axes so the result has `shape`.
inline Var reduce_to(const Var& x, const Shape& shape)
{
    if (x.shape() == shape)
        return x;
    Tensor out(shape);
    for_each_broadcast(x.shape(), shape, [&](std::size_t i, std::size_t src) { out[src] += x.value()[i]; });
    const Shape from = x.shape();
    return detail::make_op(std::move(out), {x},
                           [from](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{expand(g, from)};
                           },
                           "reduce_to");
}

inline Var expand(const Var& x, const Shape& shape)
{
    if (x.shape() == shape)
        return x;
    broadcast_shape(x.shape(), shape);
    Tensor out(shape);
    for_each_broadcast(shape, x.shape(), [&](std::size_t i, std::size_t src) { out[i] = x.value()[src]; });
    const Shape from = x.shape();
    return detail::make_op(std::move(out), {x},
                           [from](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{reduce_to(g, from)};
                           },
                           "expand");
}

inline Var operator+(const Var& a, const Var& b)
{
    Tensor v = detail::binary_values(a.value(), b.value(), [](double x, double y) { return x + y; });
    return detail::make_op(std::move(v), {a, b},
                           [](const std::vector<Var>& in, const Var&, const Var& g) {
                               return std::vector<Var>{reduce_to(g, in[0].shape()), reduce_to(g, in[1].shape())};
                           },
                           "add");
}

inline Var operator-(const Var& a, const Var& b)
{
    Tensor v = detail::binary_values(a.value(), b.value(), [](double x, double y) { return x - y; });
    return detail::make_op(std::move(v), {a, b},
                           [](const std::vector<Var>& in, const Var&, const Var& g) {
                               return std::vector<Var>{reduce_to(g, in[0].shape()), reduce_to(-g, in[1].shape())};
                           },
                           "sub");
}

inline Var operator*(const Var& a, const Var& b)
{
    Tensor v = detail::binary_values(a.value(), b.value(), [](double x, double y) { return x * y; });
    return detail::make_op(std::move(v), {a, b},
                           [](const std::vector<Var>& in, const Var&, const Var& g) {
                               return std::vector<Var>{reduce_to(g * in[1], in[0].shape()),
                                                       reduce_to(g * in[0], in[1].shape())};
                           },
                           "mul");
}

inline Var operator/(const Var& a, const Var& b)
{
    Tensor v = detail::binary_values(a.value(), b.value(), [](double x, double y) { return x / y; });
    return detail::make_op(std::move(v), {a, b},
                           [](const std::vector<Var>& in, const Var& out, const Var& g) {
                               return std::vector<Var>{reduce_to(g / in[1], in[0].shape()),
                                                       reduce_to(-(g * out / in[1]), in[1].shape())};
                           },
                           "div");
}

inline Var operator-(const Var& a) { return scale(a, -1.0); }

inline Var scale(const Var& a, double s)
{
    Tensor v = detail::unary_values(a.value(), [s](double x) { return x * s; });
    return detail::make_op(std::move(v), {a},
                           [s](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{scale(g, s)};
                           },
                           "scale");
}

inline Var add_scalar(const Var& a, double s)
{
    Tensor v = detail::unary_values(a.value(), [s](double x) { return x + s; });
    return detail::make_op(std::move(v), {a},
                           [](const std::vector<Var>&, const Var&, const Var& g) { return std::vector<Var>{g}; },
                           "add_scalar");
}

inline Var tanh(const Var& x)
{
    Tensor v = detail::unary_values(x.value(), [](double z) { return std::tanh(z); });
    return detail::make_op(std::move(v), {x},
                           [](const std::vector<Var>&, const Var& out, const Var& g) {
                               return std::vector<Var>{g * add_scalar(-(out * out), 1.0)};
                           },
                           "tanh");
}

namespace detail {

inline double normal_pdf(double z) { return 0.3989422804014327 * std::exp(-0.5 * z * z); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865476); }

/// d/dx gelu(x) = Phi(x) + x phi(x); its own derivative is phi(x) (2 - x^2).
inline Var gelu_slope(const Var& x)
{
    Tensor v = unary_values(x.value(), [](double z) { return normal_cdf(z) + z * normal_pdf(z); });
    return make_op(std::move(v), {x},
                   [](const std::vector<Var>& in, const Var&, const Var& g) {
                       Tensor c = unary_values(in[0].value(), [](double z) { return normal_pdf(z) * (2.0 - z * z); });
                       return std::vector<Var>{g * Var(std::move(c), false)};
                   },
                   "gelu_slope");
}

} // namespace detail

/// x Phi(x), with Phi the standard normal CDF.
inline Var gelu(const Var& x)
{
    Tensor v = detail::unary_values(x.value(), [](double z) { return z * detail::normal_cdf(z); });
    return detail::make_op(std::move(v), {x},
                           [](const std::vector<Var>& in, const Var&, const Var& g) {
                               return std::vector<Var>{g * detail::gelu_slope(in[0])};
                           },
                           "gelu");
}

inline Var pow_scalar(const Var& x, double p)
{
    Tensor v = detail::unary_values(x.value(), [p](double z) { return std::pow(z, p); });
    return detail::make_op(std::move(v), {x},
                           [p](const std::vector<Var>& in, const Var&, const Var& g) {
                               if (p == 1.0)
                                   return std::vector<Var>{g};
                               return std::vector<Var>{g * scale(pow_scalar(in[0], p - 1.0), p)};
                           },
                           "pow");
}

inline Var sqrt(const Var& x) { return pow_scalar(x, 0.5); }

/// 1/x with 0 at x == 0.
inline Var reciprocal_safe(const Var& x)
{
    Tensor v = detail::unary_values(x.value(), [](double z) { return z == 0.0 ? 0.0 : 1.0 / z; });
    return detail::make_op(std::move(v), {x},
                           [](const std::vector<Var>&, const Var& out, const Var& g) {
                               return std::vector<Var>{-(g * out * out)};
                           },
                           "reciprocal_safe");
}

/// sqrt(x) whose derivative at x == 0 is taken as 0, so a zero norm yields finite gradients.
inline Var sqrt_safe(const Var& x)
{
    Tensor v = detail::unary_values(x.value(), [](double z) { return std::sqrt(z); });
    return detail::make_op(std::move(v), {x},
                           [](const std::vector<Var>&, const Var& out, const Var& g) {
                               return std::vector<Var>{scale(g * reciprocal_safe(out), 0.5)};
                           },
                           "sqrt_safe");
}
inline Var square(const Var& x) { return x * x; }

inline Var sum_all(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().values())
        s += v;
    const Shape from = x.shape();
    return detail::make_op(Tensor::scalar(s), {x},
                           [from](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{expand(g, from)};
                           },
                           "sum_all");
}

inline Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size())); }

/// Sum over the last axis, keeping it as extent 1.
inline Var sum_last(const Var& x)
{
    const Shape& s = x.shape();
    if (s.empty())
        return x;
    const std::size_t n = s.back();
    const std::size_t rows = x.value().size() / n;
    Shape os = s;
    os.back() = 1;
    Tensor out(os);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            acc += x.value()[r * n + i];
        out[r] = acc;
    }
    const Shape from = s;
    return detail::make_op(std::move(out), {x},
                           [from](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{expand(g, from)};
                           },
                           "sum_last");
}

inline Var mean_last(const Var& x) { return scale(sum_last(x), 1.0 / static_cast<double>(x.shape().back())); }

inline Var softmax_last(const Var& x)
{
    const Shape& s = x.shape();
    const std::size_t n = s.back();
    const std::size_t rows = x.value().size() / n;
    Tensor out(s);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.value().data() + r * n;
        double* yi = out.data() + r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i)
            mx = std::max(mx, xi[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            yi[i] = std::exp(xi[i] - mx);
            z += yi[i];
        }
        for (std::size_t i = 0; i < n; ++i)
            yi[i] /= z;
    }
    return detail::make_op(std::move(out), {x},
                           [](const std::vector<Var>&, const Var& y, const Var& g) {
                               return std::vector<Var>{y * (g - sum_last(g * y))};
                           },
                           "softmax");
}

inline Var reshape(const Var& x, Shape shape)
{
    Tensor v = x.value().reshaped(shape);
    const Shape from = x.shape();
    return detail::make_op(std::move(v), {x},
                           [from](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{reshape(g, from)};
                           },
                           "reshape");
}

inline Var transpose_last(const Var& x)
{
    const Shape& s = x.shape();
    if (s.size() < 2)
        fail(ErrorCode::ShapeMismatch, "transpose needs rank >= 2");
    const std::size_t m = s[s.size() - 2], n = s.back();
    const std::size_t batch = x.value().size() / (m * n);
    Shape os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    Tensor out(os);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = x.value().data() + b * m * n;
        double* dst = out.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dst[j * m + i] = src[i * n + j];
    }
    return detail::make_op(std::move(out), {x},
                           [](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{transpose_last(g)};
                           },
                           "transpose");
}

inline Var permute(const Var& x, std::vector<std::size_t> perm)
{
    const Shape& s = x.shape();
    const std::size_t r = s.size();
    if (perm.size() != r)
        fail(ErrorCode::ShapeMismatch, "permutation rank mismatch");
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i)
        os[i] = s[perm[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;)
        in_strides[i - 1] = in_strides[i] * s[i];
    std::vector<std::size_t> strides(r);
    for (std::size_t i = 0; i < r; ++i)
        strides[i] = in_strides[perm[i]];
    Tensor out(os);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x.value()[src];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += strides[d];
            if (idx[d] < os[d])
                break;
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    std::vector<std::size_t> inverse(r);
    for (std::size_t i = 0; i < r; ++i)
        inverse[perm[i]] = i;
    return detail::make_op(std::move(out), {x},
                           [inverse](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{permute(g, inverse)};
                           },
                           "permute");
}

/// Batched matrix product over the last two axes. Either operand may be a plain matrix, in which
/// case it is shared across the other operand's leading axes.
inline Var matmul(const Var& a, const Var& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        fail(ErrorCode::ShapeMismatch, "matmul needs rank >= 2 operands");
    const std::size_t m = sa[sa.size() - 2], k = sa.back();
    const std::size_t kb = sb[sb.size() - 2], n = sb.back();
    if (k != kb)
        fail(ErrorCode::ShapeMismatch, "matmul inner dimension mismatch " + shape_string(sa) + " x " + shape_string(sb));

    const bool a_shared = sa.size() == 2 && sb.size() > 2;
    const bool b_shared = sb.size() == 2;
    Shape os;
    if (b_shared) {
        os = sa;
        os.back() = n;
    } else {
        os = sb;
        os[os.size() - 2] = m;
        if (!a_shared && Shape(sa.begin(), sa.end() - 2) != Shape(sb.begin(), sb.end() - 2))
            fail(ErrorCode::ShapeMismatch, "matmul batch mismatch " + shape_string(sa) + " x " + shape_string(sb));
    }
    Tensor out(os);
    if (b_shared) {
        const std::size_t rows = a.value().size() / k;
        parallel_rows(rows, k * n, [&](std::size_t lo, std::size_t hi) {
            gemm(a.value().data() + lo * k, b.value().data(), out.data() + lo * n, hi - lo, k, n);
        });
    } else {
        const std::size_t batch = b.value().size() / (k * n);
        parallel_rows(batch, m * k * n, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                const double* ap = a.value().data() + (a_shared ? 0 : i * m * k);
                gemm(ap, b.value().data() + i * k * n, out.data() + i * m * n, m, k, n);
            }
        });
    }
    return detail::make_op(std::move(out), {a, b},
                           [a_shared, b_shared](const std::vector<Var>& in, const Var&, const Var& g) {
                               const Var& x = in[0];
                               const Var& y = in[1];
                               if (b_shared) {
                                   const std::size_t kk = x.shape().back();
                                   const std::size_t nn = y.shape().back();
                                   const std::size_t rows = x.value().size() / kk;
                                   Var gx = matmul(g, transpose_last(y));
                                   Var gy = matmul(transpose_last(reshape(x, {rows, kk})), reshape(g, {rows, nn}));
                                   return std::vector<Var>{gx, gy};
                               }
                               Var gx = matmul(g, transpose_last(y));
                               if (a_shared)
                                   gx = reduce_to(gx, x.shape());
                               Var gy = matmul(transpose_last(x), g);
                               return std::vector<Var>{gx, gy};
                           },
                           "matmul");
}

inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end)
{
    const Shape& s = x.shape();
    if (axis >= s.size() || begin > end || end > s[axis])
        fail(ErrorCode::ShapeMismatch, "bad slice of " + shape_string(s));
    auto [outer, extent, inner] = detail::axis_split(s, axis);
    Shape os = s;
    os[axis] = end - begin;
    Tensor out(os);
    const std::size_t len = (end - begin) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = x.value().data() + (o * extent + begin) * inner;
        std::copy(src, src + len, out.data() + o * len);
    }
    const std::size_t full = extent;
    return detail::make_op(std::move(out), {x},
                           [axis, begin, full](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{pad_slice(g, axis, begin, full)};
                           },
                           "slice");
}

/// Embeds x into zeros of extent `full` along `axis`, starting at `begin`. Adjoint of slice.
inline Var pad_slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t full)
{
    const Shape& s = x.shape();
    auto [outer, extent, inner] = detail::axis_split(s, axis);
    if (begin + extent > full)
        fail(ErrorCode::ShapeMismatch, "pad_slice out of range");
    Shape os = s;
    os[axis] = full;
    Tensor out(os);
    const std::size_t len = extent * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = x.value().data() + o * len;
        std::copy(src, src + len, out.data() + (o * full + begin) * inner);
    }
    return detail::make_op(std::move(out), {x},
                           [axis, begin, extent](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{slice(g, axis, begin, begin + extent)};
                           },
                           "pad_slice");
}

inline Var concat(const Var& a, const Var& b, std::size_t axis)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || axis >= sa.size())
        fail(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (i != axis && sa[i] != sb[i])
            fail(ErrorCode::ShapeMismatch, "concat shape mismatch " + shape_string(sa) + " vs " + shape_string(sb));
    auto [outer, ea, inner] = detail::axis_split(sa, axis);
    const std::size_t eb = sb[axis];
    Shape os = sa;
    os[axis] = ea + eb;
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * (ea + eb) * inner;
        const double* pa = a.value().data() + o * ea * inner;
        const double* pb = b.value().data() + o * eb * inner;
        std::copy(pa, pa + ea * inner, dst);
        std::copy(pb, pb + eb * inner, dst + ea * inner);
    }
    return detail::make_op(std::move(out), {a, b},
                           [axis, ea, eb](const std::vector<Var>&, const Var&, const Var& g) {
                               return std::vector<Var>{slice(g, axis, 0, ea), slice(g, axis, ea, ea + eb)};
                           },
                           "concat");
}

struct GradOptions {
    bool create_graph = false;
};

/// Gradients of scalar `output` with respect to `inputs`. Inputs the output does not depend on get
/// exact zeros. With create_graph the returned gradients carry their own graph.
inline std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, GradOptions opts = {})
{
    if (!output.defined() || !output.requires_grad())
        fail(ErrorCode::BackwardBeforeForward, "output has no recorded graph; run the forward pass with gradients enabled");
    if (output.value().size() != 1)
        fail(ErrorCode::ShapeMismatch, "grad needs a scalar output, got " + shape_string(output.shape()));

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_map<Node*, std::shared_ptr<Node>> owners;
    {
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(output.node().get(), 0);
        owners[output.node().get()] = output.node();
        visited.insert(output.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                const auto& p = node->parents[next++];
                if (p->requires_grad && visited.insert(p.get()).second) {
                    owners[p.get()] = p;
                    stack.emplace_back(p.get(), 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    GradModeGuard mode(opts.create_graph);
    std::unordered_map<Node*, Var> grads;
    grads[output.node().get()] = constant(Tensor(output.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto found = grads.find(node);
        if (found == grads.end() || !node->backward)
            continue;
        std::vector<Var> parents;
        parents.reserve(node->parents.size());
        for (const auto& p : node->parents)
            parents.emplace_back(p);
        const Var self(owners[node]);
        std::vector<Var> pgrads = node->backward(parents, self, found->second);
        for (std::size_t i = 0; i < parents.size(); ++i) {
            Node* p = node->parents[i].get();
            if (!p->requires_grad || !pgrads[i].defined())
                continue;
            auto existing = grads.find(p);
            if (existing == grads.end())
                grads.emplace(p, pgrads[i]);
            else
                existing->second = existing->second + pgrads[i];
        }
    }

    std::vector<Var> result;
    result.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto found = grads.find(in.node().get());
        if (found == grads.end())
            result.push_back(constant(Tensor(in.shape(), 0.0)));
        else
            result.push_back(found->second);
    }
    return result;
}

} // namespace aps::ad
