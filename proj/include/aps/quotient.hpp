#pragma once

// Quotient-space encoding of pose sequences: per-joint finite-difference velocities (tangent
// vectors) and, for each velocity, the cosine between it and its projection onto each of the
// fixed coordinate planes xy, yz and zx.

#include <aps/error.hpp>
#include <aps/motion.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace aps {

/// Row-major frames x joints table.
template <class T>
struct FrameJointGrid {
    std::size_t frames = 0;
    std::size_t joints = 0;
    std::vector<T> data;

    FrameJointGrid() = default;
    FrameJointGrid(std::size_t t, std::size_t j, T fill = T{}) : frames(t), joints(j), data(t * j, fill) {}

    T& operator()(std::size_t t, std::size_t j) { return data[t * joints + j]; }
    const T& operator()(std::size_t t, std::size_t j) const { return data[t * joints + j]; }

    bool operator==(const FrameJointGrid&) const = default;
};

enum class Plane { XY = 0, YZ = 1, ZX = 2 };

inline constexpr std::array<Plane, 3> kPlanes{Plane::XY, Plane::YZ, Plane::ZX};

struct TangentField {
    FrameJointGrid<Vec3> velocities; // (T-1) x J, mm per frame-unit
    double dt = 1.0;
};

struct CosineSample {
    double value = 0.0;
    bool valid = false;
};

struct GrassmannCosines {
    FrameJointGrid<std::array<double, 3>> omega; // (xy, yz, zx)
    FrameJointGrid<std::uint8_t> valid;
};

struct QuotientRepresentation {
    Pose last_pose;
    FrameJointGrid<double> magnitudes;
    GrassmannCosines cosines;

    std::size_t frames() const { return magnitudes.frames; }
    std::size_t joints() const { return magnitudes.joints; }
};

inline TangentField tangent_velocities(const MotionSequence& seq, double dt = 1.0)
{
    if (seq.length() < 2)
        fail(ErrorCode::SequenceTooShort, "tangent velocities need at least 2 frames, got " +
                                              std::to_string(seq.length()));
    if (!(dt > 0.0))
        fail(ErrorCode::InvalidArgument, "dt must be positive");
    const std::size_t T = seq.length();
    const std::size_t J = seq.joints();
    TangentField field{FrameJointGrid<Vec3>(T - 1, J), dt};
    for (std::size_t t = 0; t + 1 < T; ++t)
        for (std::size_t j = 0; j < J; ++j)
            field.velocities(t, j) = (seq.frames[t + 1][j] - seq.frames[t][j]) / dt;
    return field;
}

/// U U^T v for the orthonormal basis U of a coordinate plane: zeroes the out-of-plane axis.
inline Vec3 grassmann_project(const Vec3& v, Plane plane)
{
    switch (plane) {
    case Plane::XY: return {v[0], v[1], 0.0};
    case Plane::YZ: return {0.0, v[1], v[2]};
    case Plane::ZX: return {v[0], 0.0, v[2]};
    }
    return v;
}

inline CosineSample orthogonal_cosine(const Vec3& v, Plane plane)
{
    const double nv = norm(v);
    if (nv == 0.0)
        return {0.0, false};
    const Vec3 proj = grassmann_project(v, plane);
    const double np = norm(proj);
    if (np == 0.0)
        return {0.0, true};
    const double c = dot(v, proj) / (nv * np);
    return {std::clamp(c, 0.0, 1.0), true};
}

inline QuotientRepresentation encode_quotient(const TangentField& field, const Pose& last_pose)
{
    const std::size_t T = field.velocities.frames;
    const std::size_t J = field.velocities.joints;
    QuotientRepresentation q;
    q.last_pose = last_pose;
    q.magnitudes = FrameJointGrid<double>(T, J, 0.0);
    q.cosines.omega = FrameJointGrid<std::array<double, 3>>(T, J, {0.0, 0.0, 0.0});
    q.cosines.valid = FrameJointGrid<std::uint8_t>(T, J, 0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < J; ++j) {
            const Vec3& v = field.velocities(t, j);
            const double m = norm(v);
            if (m == 0.0)
                continue;
            q.magnitudes(t, j) = m;
            q.cosines.valid(t, j) = 1;
            for (Plane p : kPlanes)
                q.cosines.omega(t, j)[static_cast<int>(p)] = orthogonal_cosine(v, p).value;
        }
    }
    return q;
}

inline QuotientRepresentation encode_quotient(const MotionSequence& seq, double dt = 1.0)
{
    return encode_quotient(tangent_velocities(seq, dt), seq.frames.back());
}

inline MotionSequence integrate_velocities(const Pose& start, const TangentField& field, double fps = 25.0,
                                           const Skeleton* skeleton = nullptr)
{
    const std::size_t J = start.size();
    if (field.velocities.joints != J)
        fail(ErrorCode::SkeletonMismatch, "tangent field has " + std::to_string(field.velocities.joints) +
                                              " joints, start pose has " + std::to_string(J));
    std::vector<Pose> frames;
    frames.reserve(field.velocities.frames + 1);
    frames.push_back(start);
    for (std::size_t t = 0; t < field.velocities.frames; ++t) {
        Pose next(J);
        for (std::size_t j = 0; j < J; ++j)
            next[j] = frames.back()[j] + field.velocities(t, j) * field.dt;
        frames.push_back(std::move(next));
    }
    Skeleton skel = skeleton ? *skeleton : Skeleton(J, 0);
    return MotionSequence(std::move(frames), fps, std::move(skel));
}

/// Recovers |v_x|, |v_y|, |v_z| from |v| and the three plane cosines. Signs are not recoverable.
inline Vec3 component_magnitudes(const QuotientRepresentation& q, std::size_t t, std::size_t j)
{
    if (t >= q.frames() || j >= q.joints())
        fail(ErrorCode::InvalidArgument, "component_magnitudes index out of range");
    if (!q.cosines.valid(t, j))
        fail(ErrorCode::DegenerateVelocity,
             "zero velocity at frame " + std::to_string(t) + ", joint " + std::to_string(j));
    const auto& o = q.cosines.omega(t, j);
    const double m = q.magnitudes(t, j);
    auto axis = [m](double a, double b) { return m * std::sqrt(std::max(0.0, a * a + b * b - 1.0)); };
    return {axis(o[0], o[2]), axis(o[0], o[1]), axis(o[1], o[2])};
}

} // namespace aps
