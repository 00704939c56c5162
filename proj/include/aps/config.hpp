#pragma once

#include <aps/error.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aps {

struct ModelDims {
    std::size_t d_model = 32;
    std::size_t rank = 8;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t joints = 5;
    std::size_t window = 9;   // input tokens along time
    std::size_t future = 25;  // predicted frames
    std::size_t channels = 7; // input scalars per (token, joint)
    std::size_t critic_width = 64;
    bool lowrank = true;      // decoupled low-rank gated attention; plain joint attention when off

    std::size_t head_dim() const { return d_model / heads; }
    std::size_t ffn_width() const { return 2 * d_model; }

    void validate() const
    {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0)
                fail(ErrorCode::DimsMismatch, std::string(name) + " must be positive");
        };
        positive(d_model, "d_model");
        positive(rank, "rank");
        positive(heads, "heads");
        positive(joints, "joints");
        positive(window, "window");
        positive(future, "future");
        positive(channels, "channels");
        positive(critic_width, "critic_width");
        if (rank > d_model)
            fail(ErrorCode::DimsMismatch, "rank must not exceed d_model");
        if (d_model % heads != 0)
            fail(ErrorCode::DimsMismatch, "d_model must be divisible by heads");
    }

    bool operator==(const ModelDims&) const = default;
};

struct TrainConfig {
    double lr = 0.001;
    std::size_t epochs = 15;
    std::size_t batch_size = 16;
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.1;
    double lambda = 10.0;
    double p_m = 0.1;
    double p_n = 0.1;
    double sigma = 0.05; // noise std in units of the per-channel training-set std
    std::size_t critic_steps = 1;
    std::uint64_t seed = 0;
    bool flag_d = true; // quotient-space input features
    bool flag_e = true; // masked / noised auxiliary tasks
    bool flag_l = true; // low-rank gated spatio-temporal attention
    bool joint_mask = false;
    std::size_t d_model = 32;
    std::size_t rank = 8;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t critic_width = 64;
    std::size_t observed = 10;
    std::size_t future = 25;
    std::size_t stride = 1;
    double fps = 25.0;
    double grad_clip = 10.0; // global-norm clip; 0 disables
    std::size_t max_steps = 0; // 0 = run all epochs
    std::size_t threads = 1;

    void validate() const
    {
        if (!(lr > 0.0))
            fail(ErrorCode::InvalidArgument, "lr must be positive");
        if (batch_size == 0)
            fail(ErrorCode::InvalidArgument, "batch_size must be positive");
        for (double w : {alpha1, alpha2, beta1, beta2, lambda})
            if (!(w >= 0.0))
                fail(ErrorCode::InvalidArgument, "loss weights must be non-negative");
        if (!(p_m >= 0.0 && p_m <= 1.0) || !(p_n >= 0.0 && p_n <= 1.0))
            fail(ErrorCode::InvalidProbability, "corruption probabilities must lie in [0, 1]");
        if (!(sigma > 0.0))
            fail(ErrorCode::InvalidSigma, "sigma must be positive");
        if (critic_steps == 0 || observed < 2 || future == 0 || stride == 0 || !(fps > 0.0) || threads == 0)
            fail(ErrorCode::InvalidArgument, "window, stride, fps, critic_steps and threads must be positive");
        if (!(grad_clip >= 0.0))
            fail(ErrorCode::InvalidArgument, "grad_clip must be non-negative");
    }

    std::size_t input_tokens() const { return flag_d ? observed - 1 : observed; }
    std::size_t input_channels() const { return flag_d ? 7 : 3; }

    ModelDims dims(std::size_t joints) const
    {
        ModelDims d;
        d.d_model = d_model;
        d.rank = rank;
        d.heads = heads;
        d.layers = layers;
        d.joints = joints;
        d.window = input_tokens();
        d.future = future;
        d.channels = input_channels();
        d.critic_width = critic_width;
        d.lowrank = flag_l;
        return d;
    }

    bool operator==(const TrainConfig&) const = default;
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view text)
{
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        fail(ErrorCode::InvalidArgument, "bad value '" + std::string(text) + "' for " + std::string(key));
    return value;
}

inline bool parse_bool(std::string_view key, std::string_view text)
{
    if (text == "1" || text == "true" || text == "on" || text == "yes")
        return true;
    if (text == "0" || text == "false" || text == "off" || text == "no")
        return false;
    fail(ErrorCode::InvalidArgument, "bad boolean '" + std::string(text) + "' for " + std::string(key));
}

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace detail

using ConfigSetter = std::function<void(TrainConfig&, std::string_view)>;

/// Every tunable keyed by its field name.
inline const std::map<std::string, ConfigSetter, std::less<>>& config_fields()
{
    using detail::parse_bool;
    using detail::parse_number;
    static const std::map<std::string, ConfigSetter, std::less<>> fields = [] {
        std::map<std::string, ConfigSetter, std::less<>> m;
#define APS_REAL(name) m[#name] = [](TrainConfig& c, std::string_view v) { c.name = parse_number<double>(#name, v); }
#define APS_SIZE(name) m[#name] = [](TrainConfig& c, std::string_view v) { c.name = parse_number<std::size_t>(#name, v); }
#define APS_BOOL(name) m[#name] = [](TrainConfig& c, std::string_view v) { c.name = parse_bool(#name, v); }
        APS_REAL(lr);
        APS_SIZE(epochs);
        APS_SIZE(batch_size);
        APS_REAL(alpha1);
        APS_REAL(alpha2);
        APS_REAL(beta1);
        APS_REAL(beta2);
        APS_REAL(lambda);
        APS_REAL(p_m);
        APS_REAL(p_n);
        APS_REAL(sigma);
        APS_SIZE(critic_steps);
        m["seed"] = [](TrainConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); };
        APS_BOOL(flag_d);
        APS_BOOL(flag_e);
        APS_BOOL(flag_l);
        APS_BOOL(joint_mask);
        APS_SIZE(d_model);
        APS_SIZE(rank);
        APS_SIZE(heads);
        APS_SIZE(layers);
        APS_SIZE(critic_width);
        APS_SIZE(observed);
        APS_SIZE(future);
        APS_SIZE(stride);
        APS_REAL(fps);
        APS_REAL(grad_clip);
        APS_SIZE(max_steps);
        APS_SIZE(threads);
#undef APS_REAL
#undef APS_SIZE
#undef APS_BOOL
        return m;
    }();
    return fields;
}

inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value)
{
    const auto& fields = config_fields();
    auto it = fields.find(key);
    if (it == fields.end())
        fail(ErrorCode::InvalidArgument, "unknown config key '" + std::string(key) + "'");
    it->second(cfg, detail::trim(value));
}

/// Flat `key = value` lines; `#` starts a comment.
inline void apply_config_text(TrainConfig& cfg, std::string_view text)
{
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            fail(ErrorCode::ParseError, "config line " + std::to_string(line_no) + ": expected key = value");
        set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline void apply_config_file(TrainConfig& cfg, const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoError, "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str());
}

/// Every field as `key = value` lines, readable by apply_config_text; reals use the shortest
/// round-trip form.
inline std::string config_to_text(const TrainConfig& c)
{
    std::string out;
    auto real = [&](const char* k, double v) {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        out += std::string(k) + " = " + std::string(buf, ptr) + "\n";
    };
    auto size = [&](const char* k, std::uint64_t v) { out += std::string(k) + " = " + std::to_string(v) + "\n"; };
    auto flag = [&](const char* k, bool v) { out += std::string(k) + " = " + (v ? "true" : "false") + "\n"; };
    real("lr", c.lr);
    size("epochs", c.epochs);
    size("batch_size", c.batch_size);
    real("alpha1", c.alpha1);
    real("alpha2", c.alpha2);
    real("beta1", c.beta1);
    real("beta2", c.beta2);
    real("lambda", c.lambda);
    real("p_m", c.p_m);
    real("p_n", c.p_n);
    real("sigma", c.sigma);
    size("critic_steps", c.critic_steps);
    size("seed", c.seed);
    flag("flag_d", c.flag_d);
    flag("flag_e", c.flag_e);
    flag("flag_l", c.flag_l);
    flag("joint_mask", c.joint_mask);
    size("d_model", c.d_model);
    size("rank", c.rank);
    size("heads", c.heads);
    size("layers", c.layers);
    size("critic_width", c.critic_width);
    size("observed", c.observed);
    size("future", c.future);
    size("stride", c.stride);
    real("fps", c.fps);
    real("grad_clip", c.grad_clip);
    size("max_steps", c.max_steps);
    size("threads", c.threads);
    return out;
}

} // namespace aps
