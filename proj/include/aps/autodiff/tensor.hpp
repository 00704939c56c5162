#pragma once

#include <aps/error.hpp>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace aps::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i)
            out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major array of doubles. A rank-0 tensor holds one value.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (data_.size() != numel(shape_))
            fail(ErrorCode::ShapeMismatch, "tensor data size " + std::to_string(data_.size()) +
                                               " does not match shape " + shape_string(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t dim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const
    {
        if (data_.size() != 1)
            fail(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape s) const
    {
        if (numel(s) != data_.size())
            fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
        return Tensor(std::move(s), data_);
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Thread count for the matmul kernel. Work is split by output rows only, so every output element is
// computed by one thread with the same summation order: results do not depend on the thread count.
inline std::atomic<std::size_t>& thread_setting()
{
    static std::atomic<std::size_t> threads{1};
    return threads;
}

inline void set_threads(std::size_t n) { thread_setting().store(std::max<std::size_t>(1, n)); }
inline std::size_t threads() { return thread_setting().load(); }

template <class Fn>
void parallel_rows(std::size_t rows, std::size_t work_per_row, Fn&& fn)
{
    const std::size_t n = threads();
    if (n <= 1 || rows < 2 || rows * work_per_row < 32768) {
        fn(std::size_t{0}, rows);
        return;
    }
    const std::size_t parts = std::min(n, rows);
    std::vector<std::thread> pool;
    pool.reserve(parts - 1);
    const std::size_t chunk = (rows + parts - 1) / parts;
    for (std::size_t p = 1; p < parts; ++p) {
        const std::size_t lo = p * chunk;
        const std::size_t hi = std::min(rows, lo + chunk);
        if (lo < hi)
            pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(std::size_t{0}, std::min(rows, chunk));
    for (auto& t : pool)
        t.join();
}

/// C[m x n] = A[m x k] * B[k x n], all row-major.
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                ci[j] += av * bp[j];
        }
    }
}

inline Shape broadcast_shape(const Shape& a, const Shape& b)
{
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            fail(ErrorCode::ShapeMismatch, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}

/// Strides of `in` viewed inside `out` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out)
{
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[i + off] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

/// Calls fn(out_index, in_index) for every element of `out`, mapping to the broadcast source.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& in, Fn&& fn)
{
    const std::size_t total = numel(out);
    if (in == out) {
        for (std::size_t i = 0; i < total; ++i)
            fn(i, i);
        return;
    }
    const auto strides = broadcast_strides(in, out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < total; ++i) {
        fn(i, src);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += strides[d];
            if (idx[d] < out[d])
                break;
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

} // namespace aps::ad
