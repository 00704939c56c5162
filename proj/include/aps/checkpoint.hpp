#pragma once

// Binary checkpoint. All integers are little-endian u64 unless noted, reals are IEEE-754 binary64
// little-endian, strings are a u64 byte count followed by the bytes.
//
//   magic        8 bytes  "APSCKPT\0"
//   version      u32      1
//   config       string   config_to_text() output (key = value lines)
//   dims         10 x u64 d_model rank heads layers joints window future channels critic_width lowrank
//   root_index   u64
//   normalizer   u64 C, C reals mean, C reals std, u64 K, K reals mean_pose, coord_scale, delta_scale
//   state        u64 epoch, u64 batch-in-epoch, u64 step    (all random streams derive from these)
//   param table  u64 count, then per entry: string name, u8 group (0 generator, 1 critic),
//                u64 rank, rank x u64 extents
//   params       u64 total, then the flat parameter vector in table order
//   adam x 2     generator then critic: u64 t, u64 n, n reals m, n reals v
//   end          8 bytes  "APSEND\0\0"

#include <aps/config.hpp>
#include <aps/error.hpp>
#include <aps/model.hpp>
#include <aps/trainer.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace aps {

inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr char kCheckpointEnd[8] = {'A', 'P', 'S', 'E', 'N', 'D', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void real(double v) { bytes(&v, 8); }
    void reals(const std::vector<double>& v)
    {
        if (!v.empty())
            bytes(v.data(), v.size() * 8);
    }
    void str(const std::string& s)
    {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    void bytes(void* p, std::size_t n, const char* what)
    {
        if (n > in_.size() - pos_)
            fail(ErrorCode::FormatError, std::string("checkpoint truncated while reading ") + what + " at byte " +
                                             std::to_string(pos_));
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32(const char* what)
    {
        std::uint32_t v;
        bytes(&v, 4, what);
        return v;
    }
    std::uint64_t u64(const char* what)
    {
        std::uint64_t v;
        bytes(&v, 8, what);
        return v;
    }
    std::uint8_t u8(const char* what)
    {
        std::uint8_t v;
        bytes(&v, 1, what);
        return v;
    }
    double real(const char* what)
    {
        double v;
        bytes(&v, 8, what);
        return v;
    }
    std::size_t count(const char* what, std::size_t elem_bytes)
    {
        const std::uint64_t n = u64(what);
        if (elem_bytes && n > (in_.size() - pos_) / elem_bytes)
            fail(ErrorCode::FormatError, std::string("checkpoint truncated: ") + what + " claims " + std::to_string(n) +
                                             " entries");
        return static_cast<std::size_t>(n);
    }
    std::vector<double> reals(std::size_t n, const char* what)
    {
        std::vector<double> v(n);
        if (n)
            bytes(v.data(), n * 8, what);
        return v;
    }
    std::string str(const char* what)
    {
        const std::size_t n = count(what, 1);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }
    bool at_end() const { return pos_ == in_.size(); }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

inline void write_adam(Writer& w, const AdamState& s)
{
    w.u64(s.t);
    w.u64(s.m.size());
    w.reals(s.m);
    w.reals(s.v);
}

inline AdamState read_adam(Reader& r)
{
    AdamState s;
    s.t = r.u64("optimizer step");
    const std::size_t n = r.count("optimizer moments", 16);
    s.m = r.reals(n, "optimizer first moments");
    s.v = r.reals(n, "optimizer second moments");
    return s;
}

} // namespace detail

struct Checkpoint {
    Model model;
    TrainState state;
};

inline std::string serialize_checkpoint(const Model& m, const TrainState& state)
{
    detail::Writer w;
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.str(config_to_text(m.cfg));
    const ModelDims& d = m.dims;
    for (std::uint64_t v : {d.d_model, d.rank, d.heads, d.layers, d.joints, d.window, d.future, d.channels,
                            d.critic_width, static_cast<std::size_t>(d.lowrank)})
        w.u64(v);
    w.u64(m.root_index);
    w.u64(m.norm.feature_mean.size());
    w.reals(m.norm.feature_mean);
    w.reals(m.norm.feature_std);
    w.u64(m.norm.mean_pose.size());
    w.reals(m.norm.mean_pose);
    w.real(m.norm.coord_scale);
    w.real(m.norm.delta_scale);
    w.u64(state.epoch);
    w.u64(state.batch);
    w.u64(state.step);
    w.u64(m.params.entries().size());
    for (const auto& e : m.params.entries()) {
        w.str(e.name);
        w.u8(e.group == ParamGroup::Critic ? 1 : 0);
        w.u64(e.var.shape().size());
        for (auto x : e.var.shape())
            w.u64(x);
    }
    const auto flat = m.params.flatten();
    w.u64(flat.size());
    w.reals(flat);
    detail::write_adam(w, state.generator);
    detail::write_adam(w, state.critic);
    w.bytes(kCheckpointEnd, 8);
    return w.data();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes)
{
    detail::Reader r(bytes);
    char magic[8];
    r.bytes(magic, 8, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        fail(ErrorCode::FormatError, "not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        fail(ErrorCode::FormatError, "unsupported checkpoint version " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointVersion));
    Checkpoint ck;
    Model& m = ck.model;
    apply_config_text(m.cfg, r.str("config"));
    ModelDims& d = m.dims;
    d.d_model = r.u64("dims");
    d.rank = r.u64("dims");
    d.heads = r.u64("dims");
    d.layers = r.u64("dims");
    d.joints = r.u64("dims");
    d.window = r.u64("dims");
    d.future = r.u64("dims");
    d.channels = r.u64("dims");
    d.critic_width = r.u64("dims");
    d.lowrank = r.u64("dims") != 0;
    d.validate();
    if (d != m.cfg.dims(d.joints))
        fail(ErrorCode::FormatError, "checkpoint dims disagree with its config");
    m.root_index = r.u64("root index");
    if (m.root_index >= d.joints)
        fail(ErrorCode::FormatError, "checkpoint root index out of range");
    const std::size_t C = r.count("normalizer channels", 16);
    m.norm.feature_mean = r.reals(C, "normalizer");
    m.norm.feature_std = r.reals(C, "normalizer");
    const std::size_t K = r.count("mean pose", 8);
    m.norm.mean_pose = r.reals(K, "mean pose");
    m.norm.coord_scale = r.real("normalizer");
    m.norm.delta_scale = r.real("normalizer");
    if (C != d.channels || K != d.joints * 3)
        fail(ErrorCode::FormatError, "checkpoint normalizer does not match its dims");
    ck.state.epoch = r.u64("train state");
    ck.state.batch = r.u64("train state");
    ck.state.step = r.u64("train state");

    const ModelParams reference = init_params(d, 0);
    const std::size_t count = r.count("parameter table", 10);
    if (count != reference.entries().size())
        fail(ErrorCode::FormatError, "checkpoint has " + std::to_string(count) + " parameter arrays, model needs " +
                                         std::to_string(reference.entries().size()));
    std::vector<std::pair<std::string, ad::Shape>> table;
    std::vector<ParamGroup> groups;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = r.str("parameter name");
        const ParamGroup g = r.u8("parameter group") ? ParamGroup::Critic : ParamGroup::Generator;
        const std::size_t rank = r.count("parameter rank", 8);
        ad::Shape s(rank);
        for (auto& x : s)
            x = r.u64("parameter shape");
        const auto& ref = reference.entries()[i];
        if (name != ref.name || s != ref.var.shape() || g != ref.group)
            fail(ErrorCode::FormatError, "parameter " + std::to_string(i) + " is '" + name + "' " +
                                             ad::shape_string(s) + ", expected '" + ref.name + "' " +
                                             ad::shape_string(ref.var.shape()));
        table.emplace_back(std::move(name), std::move(s));
        groups.push_back(g);
    }
    const std::size_t total = r.count("parameter vector", 8);
    const std::vector<double> flat = r.reals(total, "parameter vector");
    m.params = clone_params(reference);
    m.params.unflatten(flat);
    ck.state.generator = detail::read_adam(r);
    ck.state.critic = detail::read_adam(r);
    char end[8];
    r.bytes(end, 8, "end marker");
    if (std::memcmp(end, kCheckpointEnd, 8) != 0)
        fail(ErrorCode::FormatError, "checkpoint end marker missing");
    if (!r.at_end())
        fail(ErrorCode::FormatError, "trailing bytes after checkpoint end marker");
    return ck;
}

inline void save_checkpoint(const Model& m, const TrainState& state, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorCode::IoError, "cannot write checkpoint " + path);
    const std::string bytes = serialize_checkpoint(m, state);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCode::IoError, "failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot open checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return deserialize_checkpoint(ss.str());
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

} // namespace aps
