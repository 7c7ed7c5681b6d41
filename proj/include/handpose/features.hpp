#pragma once

#include "handpose/cloud.hpp"
#include "handpose/geometry.hpp"

namespace handpose {

enum class FeatureKind : std::uint8_t { DepthDiff = 0, NormalDiff = 1 };

/// Probe depth contributed by off-cloud lookups; large so that misses are
/// informative rather than silently near the surface.
constexpr double kBackgroundDepthMm = 10000.0;

/// Probe normal contributed by off-cloud lookups: the camera viewing axis.
inline Vec3 background_normal() { return {0.0, 0.0, 1.0}; }

/// Pair of probe offsets expressed in the conditioning frame (mm).
struct OffsetPair {
    Vec3 delta1 = Vec3::Zero();
    Vec3 delta2 = Vec3::Zero();
};

struct FeatureDescriptor {
    FeatureKind kind = FeatureKind::DepthDiff;
    OffsetPair offsets;
};

/// Draws each offset uniformly from the cube [-range_mm, range_mm]^3.
OffsetPair sample_offset_pair(Rng& rng, double range_mm);

/// Draws each offset uniformly from the ball of the given radius.
OffsetPair sample_offset_pair_in_ball(Rng& rng, double radius_mm);

/// Probe position: p + R * delta, with R the frame pose.
inline Vec3 offset_position(const Vec3& p, const Vec3& delta, const LocalFrame& frame) {
    return p + frame.pose * delta;
}

/// Depth read by a probe: the looked-up surface depth, or the background
/// constant when the probe projects off the cloud.
inline double probe_depth(const Cloud& cloud, const Vec3& q) {
    const std::int32_t id = lookup_pixel(cloud, q);
    return id == kBackground ? kBackgroundDepthMm : cloud.points[id].z();
}

inline Vec3 probe_normal(const Cloud& cloud, const Vec3& q) {
    const std::int32_t id = lookup_pixel(cloud, q);
    return id == kBackground ? background_normal() : cloud.normals[id];
}

/// Core evaluation shared by training and inference. `pose` rotates the
/// stored offsets into camera coordinates before probing.
inline double eval_feature(const Cloud& cloud, const Vec3& p, const Mat3& pose, FeatureKind kind,
                           const Vec3& delta1, const Vec3& delta2) {
    const Vec3 q1 = p + pose * delta1;
    const Vec3 q2 = p + pose * delta2;
    if (kind == FeatureKind::DepthDiff) return probe_depth(cloud, q1) - probe_depth(cloud, q2);
    return probe_normal(cloud, q1).dot(probe_normal(cloud, q2));
}

/// Depth difference between the two frame-rotated probes.
double depth_diff(const Cloud& cloud, std::int32_t index, const LocalFrame& frame,
                  const OffsetPair& offsets);

/// Dot product of the normals at the two frame-rotated probes, in [-1, 1].
/// Throws MissingNormals when the cloud has no normals.
double normal_diff(const Cloud& cloud, std::int32_t index, const LocalFrame& frame,
                   const OffsetPair& offsets);

}  // namespace handpose
