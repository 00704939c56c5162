#pragma once

// Text formats (MQS sequences, MQQ quotient dumps, corruption sidecars), synthetic motion, and
// sliding-window dataset assembly.
//
// MQS grammar (one header line, then T body lines, '\n' line ends):
//   header := "MQS1" " J=" uint " T=" uint " fps=" real " root=" uint [ " action=" token ]
//   body   := T lines of exactly 3J reals "x y z" per joint, in joint order, millimeters
// Readers accept header fields in any order after the magic and any run of spaces/tabs between
// numbers; writers emit the canonical form above with single spaces and shortest round-trip
// decimal floats, so write(parse(f)) == f for canonical f and parse(write(s)) == s bitwise.

#include <aps/error.hpp>
#include <aps/motion.hpp>
#include <aps/perturbation.hpp>
#include <aps/quotient.hpp>
#include <aps/rng.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aps {

inline std::string format_real(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        fail(ErrorCode::FormatError, "cannot format number");
    return std::string(buf, ptr);
}

namespace detail {

inline Error parse_error(std::size_t line, std::size_t column, const std::string& what)
{
    return Error(ErrorCode::ParseError,
                 "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what);
}

struct Token {
    std::string_view text;
    std::size_t column; // 1-based
};

inline std::vector<Token> split_tokens(std::string_view line)
{
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
            ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r')
            ++i;
        if (i > start)
            out.push_back({line.substr(start, i - start), start + 1});
    }
    return out;
}

inline std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

template <class T>
T parse_field(const Token& tok, std::size_t line, std::size_t offset, const char* what)
{
    T value{};
    const auto text = tok.text.substr(offset);
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw parse_error(line, tok.column + offset, std::string("bad ") + what + " '" + std::string(text) + "'");
    return value;
}

} // namespace detail

inline MotionSequence parse_mqs(std::string_view text)
{
    const auto lines = detail::split_lines(text);
    if (lines.empty())
        throw detail::parse_error(1, 1, "empty file");
    const auto header = detail::split_tokens(lines[0]);
    if (header.empty() || header[0].text != "MQS1")
        throw detail::parse_error(1, 1, "bad magic, expected MQS1");

    std::optional<std::size_t> J, T, root;
    std::optional<double> fps;
    std::optional<std::string> action;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const auto& tok = header[i];
        const auto eq = tok.text.find('=');
        if (eq == std::string_view::npos)
            throw detail::parse_error(1, tok.column, "expected key=value");
        const auto key = tok.text.substr(0, eq);
        if (key == "J")
            J = detail::parse_field<std::size_t>(tok, 1, eq + 1, "joint count");
        else if (key == "T")
            T = detail::parse_field<std::size_t>(tok, 1, eq + 1, "frame count");
        else if (key == "fps")
            fps = detail::parse_field<double>(tok, 1, eq + 1, "fps");
        else if (key == "root")
            root = detail::parse_field<std::size_t>(tok, 1, eq + 1, "root index");
        else if (key == "action")
            action = std::string(tok.text.substr(eq + 1));
        else
            throw detail::parse_error(1, tok.column, "unknown header field '" + std::string(key) + "'");
    }
    if (!J || !T || !fps)
        throw detail::parse_error(1, 1, "header needs J, T and fps");
    if (*J == 0 || *T == 0 || !(*fps > 0.0) || !std::isfinite(*fps))
        throw detail::parse_error(1, 1, "J, T and fps must be positive");
    if (root.value_or(0) >= *J)
        throw detail::parse_error(1, 1, "root index out of range");

    std::vector<Pose> frames;
    frames.reserve(*T);
    std::size_t ln = 1;
    for (; ln < lines.size() && frames.size() < *T; ++ln) {
        const auto toks = detail::split_tokens(lines[ln]);
        if (toks.size() != 3 * *J)
            throw detail::parse_error(ln + 1, 1, "expected " + std::to_string(3 * *J) + " numbers, found " +
                                                     std::to_string(toks.size()));
        Pose p(*J);
        for (std::size_t k = 0; k < toks.size(); ++k) {
            const double v = detail::parse_field<double>(toks[k], ln + 1, 0, "number");
            if (!std::isfinite(v))
                throw detail::parse_error(ln + 1, toks[k].column, "non-finite value");
            p[k / 3][k % 3] = v;
        }
        frames.push_back(std::move(p));
    }
    if (frames.size() != *T)
        throw detail::parse_error(ln + 1, 1, "expected " + std::to_string(*T) + " frames, found " +
                                                 std::to_string(frames.size()));
    for (; ln < lines.size(); ++ln)
        if (!detail::split_tokens(lines[ln]).empty())
            throw detail::parse_error(ln + 1, 1, "unexpected content after the last frame");
    return MotionSequence(std::move(frames), *fps, Skeleton(*J, root.value_or(0)), action);
}

inline std::string write_mqs(const MotionSequence& seq)
{
    std::string out = "MQS1 J=" + std::to_string(seq.joints()) + " T=" + std::to_string(seq.length()) +
                      " fps=" + format_real(seq.fps) + " root=" + std::to_string(seq.skeleton.root_index);
    if (seq.action)
        out += " action=" + *seq.action;
    out += '\n';
    for (const auto& f : seq.frames) {
        for (std::size_t j = 0; j < f.size(); ++j)
            for (std::size_t a = 0; a < 3; ++a) {
                if (j || a)
                    out += ' ';
                out += format_real(f[j][a]);
            }
        out += '\n';
    }
    return out;
}

/// Header "MQQ v1 J=<J> T=<frames>", then one line per (t, j), t-major: "|v| O_xy O_yz O_zx valid".
inline std::string write_mqq(const QuotientRepresentation& q)
{
    std::string out = "MQQ v1 J=" + std::to_string(q.joints()) + " T=" + std::to_string(q.frames()) + "\n";
    for (std::size_t t = 0; t < q.frames(); ++t)
        for (std::size_t j = 0; j < q.joints(); ++j) {
            const auto& o = q.cosines.omega(t, j);
            out += format_real(q.magnitudes(t, j)) + ' ' + format_real(o[0]) + ' ' + format_real(o[1]) + ' ' +
                   format_real(o[2]) + ' ' + (q.cosines.valid(t, j) ? "1" : "0") + '\n';
        }
    return out;
}

/// One line per corrupted scalar: "<t> <j> <axis>", axis as x/y/z for 3-channel tensors.
inline std::string write_mask_sidecar(const CorruptionMask& mask)
{
    std::string out;
    for (std::size_t t = 0; t < mask.frames; ++t)
        for (std::size_t j = 0; j < mask.joints; ++j)
            for (std::size_t c = 0; c < mask.channels; ++c)
                if (mask(t, j, c)) {
                    out += std::to_string(t) + ' ' + std::to_string(j) + ' ';
                    out += mask.channels == 3 ? std::string(1, "xyz"[c]) : std::to_string(c);
                    out += '\n';
                }
    return out;
}

inline FeatureTensor coordinates_tensor(const MotionSequence& seq)
{
    FeatureTensor f(seq.length(), seq.joints(), 3);
    for (std::size_t t = 0; t < seq.length(); ++t)
        for (std::size_t j = 0; j < seq.joints(); ++j)
            for (std::size_t a = 0; a < 3; ++a)
                f(t, j, a) = seq.frames[t][j][a];
    return f;
}

inline MotionSequence sequence_from_tensor(const FeatureTensor& f, const MotionSequence& like)
{
    MotionSequence out = like;
    for (std::size_t t = 0; t < f.frames; ++t)
        for (std::size_t j = 0; j < f.joints; ++j)
            for (std::size_t a = 0; a < 3; ++a)
                out.frames[t][j][a] = f(t, j, a);
    return out;
}

inline std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorCode::IoError, "cannot write " + path);
    out << text;
    if (!out)
        fail(ErrorCode::IoError, "failed writing " + path);
}

inline MotionSequence load_mqs(const std::string& path)
{
    try {
        return parse_mqs(read_text_file(path));
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

enum class SynthKind { Sinusoid, RandomWalk, Constant };

inline SynthKind parse_synth_kind(std::string_view s)
{
    if (s == "sinusoid")
        return SynthKind::Sinusoid;
    if (s == "random_walk")
        return SynthKind::RandomWalk;
    if (s == "constant")
        return SynthKind::Constant;
    fail(ErrorCode::InvalidArgument, "unknown synth kind '" + std::string(s) + "'");
}

struct SynthOptions {
    SynthKind kind = SynthKind::Sinusoid;
    std::size_t joints = 5;
    std::size_t frames = 60;
    double fps = 25.0;
    std::uint64_t seed = 0;
    double amplitude = 50.0; // mm (per-step std for random_walk)
    double period_s = 4.0;   // sinusoid base period in seconds
};

/// sinusoid: x_{j,a}(t) = o_{j,a} + A sin(2 pi (j+1) t / (fps * period) + phi_{j,a}), so joint j
/// runs at the (j+1)-th harmonic of the base period; offsets o ~ U(-300, 300) mm and phases
/// phi ~ U(0, 2 pi) come from the seed. random_walk starts at the offsets and adds A * N(0, 1)
/// per coordinate per frame. constant holds the offsets.
inline MotionSequence synth_generate(const SynthOptions& opt)
{
    if (opt.joints < 2 || opt.frames < 2)
        fail(ErrorCode::InvalidArgument, "synthetic sequences need J >= 2 and T >= 2");
    if (!(opt.fps > 0.0) || !(opt.period_s > 0.0) || !(opt.amplitude >= 0.0))
        fail(ErrorCode::InvalidArgument, "fps and period must be positive, amplitude non-negative");
    CounterRng layout(opt.seed, "synth.layout");
    std::vector<Vec3> offset(opt.joints), phase(opt.joints);
    for (std::size_t j = 0; j < opt.joints; ++j)
        for (std::size_t a = 0; a < 3; ++a) {
            offset[j][a] = layout.uniform(-300.0, 300.0);
            phase[j][a] = layout.uniform(0.0, 2.0 * std::numbers::pi);
        }
    CounterRng steps(opt.seed, "synth.walk");
    std::vector<Pose> frames;
    frames.reserve(opt.frames);
    Pose current(offset);
    for (std::size_t t = 0; t < opt.frames; ++t) {
        Pose p(opt.joints);
        for (std::size_t j = 0; j < opt.joints; ++j)
            for (std::size_t a = 0; a < 3; ++a) {
                switch (opt.kind) {
                case SynthKind::Sinusoid: {
                    const double w = 2.0 * std::numbers::pi * static_cast<double>(j + 1) / (opt.fps * opt.period_s);
                    p[j][a] = offset[j][a] + opt.amplitude * std::sin(w * static_cast<double>(t) + phase[j][a]);
                    break;
                }
                case SynthKind::RandomWalk:
                    if (t > 0)
                        current[j][a] += opt.amplitude * steps.normal();
                    p[j][a] = current[j][a];
                    break;
                case SynthKind::Constant:
                    p[j][a] = offset[j][a];
                    break;
                }
            }
        frames.push_back(std::move(p));
    }
    return MotionSequence(std::move(frames), opt.fps, Skeleton(opt.joints, 0));
}

inline MotionSequence synth_generate(SynthKind kind, std::size_t J, std::size_t T, double fps, std::uint64_t seed,
                                     double amplitude)
{
    return synth_generate(SynthOptions{kind, J, T, fps, seed, amplitude});
}

struct MotionWindow {
    std::vector<Pose> observed;
    std::vector<Pose> future;
    std::optional<std::string> action;
    std::size_t source = 0;
    std::size_t start = 0;
};

struct WindowedDataset {
    std::vector<MotionWindow> windows;
    std::size_t observed = 0;
    std::size_t future = 0;
    std::size_t stride = 1;
    std::size_t joints = 0;
    std::size_t root_index = 0;
    double fps = 25.0;
    std::vector<std::string> warnings;

    bool empty() const { return windows.empty(); }
    std::size_t size() const { return windows.size(); }
};

inline std::size_t window_count(std::size_t T, std::size_t n, std::size_t N, std::size_t stride)
{
    if (T < n + N)
        return 0;
    return (T - n - N) / stride + 1;
}

/// Sliding windows of n observed + N future frames, copied from the sources without resampling.
inline WindowedDataset make_windows(const std::vector<MotionSequence>& sequences, std::size_t n, std::size_t N,
                                    std::size_t stride = 1)
{
    if (n == 0 || N == 0 || stride == 0)
        fail(ErrorCode::InvalidArgument, "window lengths and stride must be positive");
    WindowedDataset ds;
    ds.observed = n;
    ds.future = N;
    ds.stride = stride;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto& seq = sequences[s];
        if (s == 0) {
            ds.joints = seq.joints();
            ds.root_index = seq.skeleton.root_index;
            ds.fps = seq.fps;
        } else if (seq.joints() != ds.joints) {
            fail(ErrorCode::SkeletonMismatch, "sequence " + std::to_string(s) + " has a different joint count");
        }
        const std::size_t count = window_count(seq.length(), n, N, stride);
        if (count == 0)
            ds.warnings.push_back("sequence " + std::to_string(s) + " has " + std::to_string(seq.length()) +
                                  " frames, fewer than " + std::to_string(n + N) + "; no windows");
        for (std::size_t w = 0; w < count; ++w) {
            const std::size_t start = w * stride;
            MotionWindow win;
            win.observed.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(start),
                                seq.frames.begin() + static_cast<std::ptrdiff_t>(start + n));
            win.future.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(start + n),
                              seq.frames.begin() + static_cast<std::ptrdiff_t>(start + n + N));
            win.action = seq.action;
            win.source = s;
            win.start = start;
            ds.windows.push_back(std::move(win));
        }
    }
    return ds;
}

} // namespace aps
