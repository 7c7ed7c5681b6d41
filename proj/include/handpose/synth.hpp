#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "handpose/cloud.hpp"
#include "handpose/common.hpp"
#include "handpose/hand.hpp"

namespace handpose {

/// Joint angles of one finger, radians. Flexion is positive toward the
/// palmar side; abduction swings the finger sideways in the palm plane.
struct FingerAngles {
    double abduction = 0.0;
    double mcp_flex = 0.0;
    double pip_flex = 0.0;
    double dip_flex = 0.0;
};

/// Anatomical angle limits (radians) enforced by forward_kinematics.
struct AngleLimits {
    double lo = 0.0;
    double hi = 0.0;
};
inline constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
inline constexpr AngleLimits kAbductionLimits{-25.0 * kDegToRad, 25.0 * kDegToRad};
inline constexpr AngleLimits kMcpFlexLimits{-20.0 * kDegToRad, 90.0 * kDegToRad};
inline constexpr AngleLimits kPipFlexLimits{0.0, 110.0 * kDegToRad};
inline constexpr AngleLimits kDipFlexLimits{0.0, 90.0 * kDegToRad};

/// Articulation state of the capsule hand: global pose as yaw/pitch/roll
/// (applied innermost-to-outermost, so roll is an in-plane rotation about
/// the camera axis), translation of the hand centre, uniform scale, and
/// per-finger joint angles in the fixed thumb..pinky order.
struct SkeletonParams {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    Vec3 translation{0.0, 0.0, 550.0};
    double scale = 1.0;
    std::array<FingerAngles, kNumFingers> fingers{};

    Mat3 global_rotation() const;  // rot_z(roll) * rot_y(yaw) * rot_x(pitch)
};

/// Sphere-swept segment.
struct Capsule {
    Vec3 a{Vec3::Zero()};
    Vec3 b{Vec3::Zero()};
    double radius = 0.0;
};

/// Sphere-swept box (rounded slab): all points within `radius` of the
/// core box with the given half extents. `rot` columns are the box axes.
struct Slab {
    Mat3 rot{Mat3::Identity()};
    Vec3 center{Vec3::Zero()};
    Vec3 half{Vec3::Zero()};
    double radius = 0.0;
};

/// Render primitives bound to the skeleton: capsule fingers plus the
/// rounded palm slab.
struct CapsuleModel {
    std::vector<Capsule> capsules;
    std::vector<Slab> slabs;
};

/// Throws DataError if any joint angle is outside its anatomical limit.
void check_limits(const SkeletonParams& params);

/// Joint positions by chaining wrist -> MCP -> PIP -> DIP -> TIP over the
/// canonical template, then applying scale, global rotation, translation.
/// Each finger is planar: abduction turns its base direction in the palm
/// plane, then the three flexion angles accumulate about one hinge axis.
HandPose forward_kinematics(const SkeletonParams& params);

/// Skin bound to the skeleton: three capsules per finger in the fixed
/// finger order, a thumb webbing capsule, and the palm slab.
CapsuleModel build_capsules(const HandPose& pose, double scale);

/// Rendered frame plus its ground truth: exact joints and the per-pixel
/// analytic surface normal of the nearest hit (unit, facing the camera;
/// zero where no capsule is hit).
struct RenderResult {
    DepthFrame frame;
    HandPose pose;
    std::vector<Vec3> normals;
};

/// Nearest ray-capsule intersection per pixel; depth in mm. Throws
/// OutOfFrustum when the capsule model is not fully inside the view.
RenderResult render_depth(const SkeletonParams& params, const CameraIntrinsics& camera);

/// Renders an arbitrary capsule set (the primitive under render_depth).
/// Optional per-pixel exact surface normals of the nearest hit.
DepthFrame render_capsules(const CapsuleModel& caps, const CameraIntrinsics& camera,
                           std::vector<Vec3>* normals = nullptr);

inline CameraIntrinsics default_camera() {
    CameraIntrinsics k;
    k.fx = 475.0;
    k.fy = 475.0;
    k.cx = 160.0;
    k.cy = 120.0;
    k.width = 320;
    k.height = 240;
    return k;
}

/// Pose-sampling ranges for dataset generation. Angles are uniform within
/// the anatomical limits; the global orientation is uniform within the
/// given half-ranges and the hand centre is uniform in a camera-aligned
/// box. Frames whose capsules leave the frustum are resampled.
struct SynthConfig {
    int count = 100;
    std::uint64_t seed = 1;
    CameraIntrinsics camera = default_camera();
    double yaw_range_deg = 60.0;
    double pitch_range_deg = 45.0;
    double roll_range_deg = 180.0;
    double noise_mm = 0.0;  // Gaussian depth jitter, 0 disables
    double min_z_mm = 520.0;
    double max_z_mm = 700.0;
    double xy_jitter_mm = 25.0;
};

/// One dataset frame: depth file path (relative to the manifest), exact
/// joints, and the skeleton parameters that produced it.
struct ManifestEntry {
    std::string path;
    HandPose pose;
    SkeletonParams params;
};

/// Renders `config.count` frames into `out_dir` (HCDF depth files plus
/// "manifest.txt") and returns the manifest. Per-frame seeded generators
/// make the output byte-identical for a fixed seed.
std::vector<ManifestEntry> generate_dataset(const SynthConfig& config, const std::string& out_dir);

/// Parses a manifest written by generate_dataset; relative depth paths are
/// resolved against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace handpose
