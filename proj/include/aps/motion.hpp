#pragma once

#include <aps/error.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace aps {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline Vec3 operator/(const Vec3& a, double s) { return {a[0] / s, a[1] / s, a[2] / s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Skeleton {
    std::size_t joint_count = 0;
    std::size_t root_index = 0;
    std::vector<std::string> joint_names;

    Skeleton() = default;
    Skeleton(std::size_t joints, std::size_t root = 0, std::vector<std::string> names = {})
        : joint_count(joints), root_index(root), joint_names(std::move(names))
    {
        validate();
    }

    // Single-joint skeletons are accepted so that point trajectories can use the same types.
    void validate() const
    {
        if (joint_count == 0)
            fail(ErrorCode::InvalidArgument, "skeleton needs at least one joint");
        if (root_index >= joint_count)
            fail(ErrorCode::InvalidArgument,
                 "root index " + std::to_string(root_index) + " out of range for " +
                     std::to_string(joint_count) + " joints");
        if (!joint_names.empty() && joint_names.size() != joint_count)
            fail(ErrorCode::InvalidArgument, "joint name count does not match joint count");
    }

    bool operator==(const Skeleton&) const = default;
};

/// One frame of joint positions in millimeters.
struct Pose {
    std::vector<Vec3> joints;

    Pose() = default;
    explicit Pose(std::size_t joint_count) : joints(joint_count, Vec3{0.0, 0.0, 0.0}) {}
    explicit Pose(std::vector<Vec3> coords) : joints(std::move(coords)) {}

    std::size_t size() const { return joints.size(); }
    Vec3& operator[](std::size_t j) { return joints[j]; }
    const Vec3& operator[](std::size_t j) const { return joints[j]; }

    bool finite() const
    {
        for (const auto& v : joints)
            for (double c : v)
                if (!std::isfinite(c))
                    return false;
        return true;
    }

    bool operator==(const Pose&) const = default;
};

inline bool bitwise_equal(const Pose& a, const Pose& b)
{
    return a.size() == b.size() &&
           std::memcmp(a.joints.data(), b.joints.data(), a.size() * sizeof(Vec3)) == 0;
}

struct MotionSequence {
    std::vector<Pose> frames;
    double fps = 25.0;
    Skeleton skeleton;
    std::optional<std::string> action;

    MotionSequence() = default;
    MotionSequence(std::vector<Pose> f, double rate, Skeleton skel,
                   std::optional<std::string> label = std::nullopt)
        : frames(std::move(f)), fps(rate), skeleton(std::move(skel)), action(std::move(label))
    {
        validate();
    }

    std::size_t length() const { return frames.size(); }
    std::size_t joints() const { return skeleton.joint_count; }

    void validate() const
    {
        skeleton.validate();
        if (!(fps > 0.0) || !std::isfinite(fps))
            fail(ErrorCode::InvalidArgument, "fps must be positive and finite");
        if (frames.empty())
            fail(ErrorCode::SequenceTooShort, "motion sequence has no frames");
        for (std::size_t t = 0; t < frames.size(); ++t) {
            if (frames[t].size() != skeleton.joint_count)
                fail(ErrorCode::SkeletonMismatch,
                     "frame " + std::to_string(t) + " has " + std::to_string(frames[t].size()) +
                         " joints, skeleton has " + std::to_string(skeleton.joint_count));
            if (!frames[t].finite())
                fail(ErrorCode::InvalidArgument, "frame " + std::to_string(t) + " has non-finite coordinates");
        }
    }
};

inline constexpr double kIntegralTolerance = 1e-9;

struct HorizonSpec {
    std::vector<int> milliseconds{80, 160, 320, 400, 560, 1000};

    HorizonSpec() = default;
    explicit HorizonSpec(std::vector<int> ms) : milliseconds(std::move(ms)) { validate(); }

    void validate() const
    {
        if (milliseconds.empty())
            fail(ErrorCode::InvalidArgument, "horizon list is empty");
        for (std::size_t i = 0; i < milliseconds.size(); ++i) {
            if (milliseconds[i] <= 0)
                fail(ErrorCode::InvalidArgument, "horizons must be positive");
            if (i > 0 && milliseconds[i] <= milliseconds[i - 1])
                fail(ErrorCode::InvalidArgument, "horizons must be strictly increasing");
        }
    }
};

/// 1-based index into the predicted window (frame 1 is the first predicted frame).
inline std::size_t horizon_to_frame(int ms, double fps)
{
    if (ms <= 0 || !(fps > 0.0))
        fail(ErrorCode::InvalidArgument, "horizon and fps must be positive");
    const double frames = static_cast<double>(ms) * fps / 1000.0;
    const double rounded = std::round(frames);
    if (std::abs(frames - rounded) > kIntegralTolerance || rounded < 1.0)
        fail(ErrorCode::HorizonMisaligned,
             "horizon " + std::to_string(ms) + " ms does not land on a frame at " + std::to_string(fps) + " fps");
    return static_cast<std::size_t>(rounded);
}

inline Pose root_align(const Pose& pose, std::size_t root_index)
{
    if (root_index >= pose.size())
        fail(ErrorCode::InvalidArgument, "root index out of range");
    const Vec3 root = pose[root_index];
    Pose out(pose.size());
    for (std::size_t j = 0; j < pose.size(); ++j)
        out[j] = pose[j] - root;
    return out;
}

inline MotionSequence root_align(const MotionSequence& seq)
{
    MotionSequence out = seq;
    for (auto& f : out.frames)
        f = root_align(f, seq.skeleton.root_index);
    return out;
}

/// Drops bitwise-duplicate consecutive frames, then keeps every k-th frame.
inline MotionSequence downsample(const MotionSequence& seq, double target_fps)
{
    if (!(target_fps > 0.0))
        fail(ErrorCode::ResampleUnsupported, "target fps must be positive");
    const double ratio = seq.fps / target_fps;
    const double stride_real = std::round(ratio);
    if (std::abs(ratio - stride_real) > kIntegralTolerance || stride_real < 1.0)
        fail(ErrorCode::ResampleUnsupported,
             "cannot resample " + std::to_string(seq.fps) + " fps to " + std::to_string(target_fps) + " fps");
    const auto stride = static_cast<std::size_t>(stride_real);

    std::vector<Pose> unique;
    unique.reserve(seq.frames.size());
    for (const auto& f : seq.frames)
        if (unique.empty() || !bitwise_equal(unique.back(), f))
            unique.push_back(f);

    std::vector<Pose> kept;
    for (std::size_t t = 0; t < unique.size(); t += stride)
        kept.push_back(unique[t]);
    return MotionSequence(std::move(kept), target_fps, seq.skeleton, seq.action);
}

} // namespace aps
