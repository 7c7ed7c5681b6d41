#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "handpose/geometry.hpp"

namespace handpose {

/// Pinhole camera model. depth_scale is millimetres per stored u16 unit
/// in the on-disk format; in memory depth is always metric millimetres.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    double depth_scale = 0.125;
};

/// Raw sensor analogue: a row-major grid of metric depths in millimetres,
/// 0 encodes missing/background.
struct DepthFrame {
    CameraIntrinsics intrinsics;
    std::vector<float> depth;  // width * height, row-major

    float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * intrinsics.width + u]; }
    float& at(int u, int v) { return depth[static_cast<std::size_t>(v) * intrinsics.width + u]; }
    bool valid(int u, int v) const {
        return u >= 0 && v >= 0 && u < intrinsics.width && v < intrinsics.height && at(u, v) > 0.0f;
    }
};

/// Depth frame file ("HCDF"): magic, u16 version, u32 width/height,
/// f32 fx fy cx cy depth_scale, then width*height little-endian u16
/// samples with value * depth_scale = millimetres, 0 = missing.
void save_depth_frame(const std::string& path, const DepthFrame& frame);
DepthFrame load_depth_frame(const std::string& path);

constexpr std::int32_t kBackground = -1;

/// 2.5D point cloud indexed by pixel. Points are back-projected camera
/// coordinates in millimetres. Edge flags and normals are filled by
/// classify_edges / the normals module after construction.
struct Cloud {
    DepthFrame frame;
    std::vector<Vec3> points;
    std::vector<std::int32_t> pixel_to_point;  // width*height, kBackground where invalid
    std::vector<std::int32_t> point_pixel;     // point -> linear pixel index
    std::vector<std::uint8_t> is_edge;
    std::vector<Vec3> normals;  // empty until computed; unit when present

    std::size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }
    int pixel_u(std::int32_t index) const { return point_pixel[index] % frame.intrinsics.width; }
    int pixel_v(std::int32_t index) const { return point_pixel[index] / frame.intrinsics.width; }
};

/// Back-projects every valid pixel: p = ((u-cx)d/fx, (v-cy)d/fy, d).
/// Throws EmptyFrame when no pixel carries depth.
Cloud backproject(const DepthFrame& frame);

constexpr double kDefaultEdgeJumpMm = 25.0;

/// Marks a point as edge iff any of its 8 pixel neighbours is missing,
/// out of image, or differs in depth by more than jump_mm.
void classify_edges(Cloud& cloud, double jump_mm = kDefaultEdgeJumpMm);

/// Projects q through the intrinsics, rounds to the nearest pixel and
/// returns that pixel's point id, or kBackground.
inline std::int32_t lookup_pixel(const Cloud& cloud, const Vec3& q) {
    if (q.z() <= 0.0) return kBackground;
    const auto& k = cloud.frame.intrinsics;
    const long u = std::lround(k.cx + k.fx * q.x() / q.z());
    const long v = std::lround(k.cy + k.fy * q.y() / q.z());
    if (u < 0 || v < 0 || u >= k.width || v >= k.height) return kBackground;
    return cloud.pixel_to_point[static_cast<std::size_t>(v) * k.width + u];
}

/// All point ids within Euclidean 3D distance radius_mm of `center`.
/// Scans only the pixel window covering the query ball, then filters by
/// exact 3D distance, so the result matches a brute-force all-pairs scan.
std::vector<std::int32_t> radius_search(const Cloud& cloud, const Vec3& center, double radius_mm);

/// radius_search around an existing point; includes the query itself.
std::vector<std::int32_t> radius_neighbors(const Cloud& cloud, std::int32_t index, double radius_mm);

}  // namespace handpose
