#pragma once

// Shared helpers for the test suites: small synthetic scenes built directly
// from analytic geometry, independent of the library's renderer.

#include <algorithm>
#include <cmath>
#include <vector>

#include "handpose/cloud.hpp"
#include "handpose/geometry.hpp"

namespace testutil {

using handpose::CameraIntrinsics;
using handpose::Cloud;
using handpose::DepthFrame;
using handpose::Mat3;
using handpose::Rng;
using handpose::Vec3;

inline CameraIntrinsics make_intrinsics(int width = 320, int height = 240, double f = 475.0) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = f;
    k.cx = width / 2;
    k.cy = height / 2;
    k.depth_scale = 0.125;
    return k;
}

/// Constant-depth rectangle [u0,u1) x [v0,v1) at depth_mm; rest missing.
inline DepthFrame plane_frame(const CameraIntrinsics& k, double depth_mm, int u0, int u1, int v0,
                              int v1) {
    DepthFrame frame;
    frame.intrinsics = k;
    frame.depth.assign(static_cast<std::size_t>(k.width) * k.height, 0.0f);
    for (int v = v0; v < v1; ++v)
        for (int u = u0; u < u1; ++u) frame.at(u, v) = static_cast<float>(depth_mm);
    return frame;
}

/// Ray-traced sphere; returns the depth frame plus per-pixel analytic
/// outward normals (zero where the ray misses).
inline DepthFrame sphere_frame(const CameraIntrinsics& k, const Vec3& center, double radius,
                               std::vector<Vec3>* normals = nullptr) {
    DepthFrame frame;
    frame.intrinsics = k;
    frame.depth.assign(static_cast<std::size_t>(k.width) * k.height, 0.0f);
    if (normals) normals->assign(frame.depth.size(), Vec3::Zero());
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            const Vec3 dir((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
            const double a = dir.squaredNorm();
            const double b = -2.0 * dir.dot(center);
            const double c = center.squaredNorm() - radius * radius;
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0) continue;
            const double t = (-b - std::sqrt(disc)) / (2.0 * a);
            if (t <= 0.0) continue;
            frame.at(u, v) = static_cast<float>(t);  // p.z = t since dir.z = 1
            if (normals) (*normals)[static_cast<std::size_t>(v) * k.width + u] = (t * dir - center) / radius;
        }
    }
    return frame;
}

/// Analytic tilted plane through (0, 0, depth0_mm) with unit normal n
/// (n.z > 0), rasterized over [u0,u1) x [v0,v1). Optional per-pixel
/// normals output (constant n where the plane is visible).
inline DepthFrame ramp_frame(const CameraIntrinsics& k, const Vec3& n, double depth0_mm, int u0,
                             int u1, int v0, int v1, std::vector<Vec3>* normals = nullptr) {
    DepthFrame frame;
    frame.intrinsics = k;
    frame.depth.assign(static_cast<std::size_t>(k.width) * k.height, 0.0f);
    if (normals) normals->assign(frame.depth.size(), Vec3::Zero());
    const double c = n.z() * depth0_mm;  // plane n . p = c
    for (int v = v0; v < v1; ++v) {
        for (int u = u0; u < u1; ++u) {
            const double denom = n.x() * (u - k.cx) / k.fx + n.y() * (v - k.cy) / k.fy + n.z();
            if (denom <= 1e-6) continue;
            const double z = c / denom;
            if (z <= 0.0) continue;
            frame.at(u, v) = static_cast<float>(z);
            if (normals) (*normals)[static_cast<std::size_t>(v) * k.width + u] = n;
        }
    }
    return frame;
}

/// Constant-depth disc of the given pixel radius centred at (cu, cv).
inline DepthFrame disc_frame(const CameraIntrinsics& k, double depth_mm, double cu, double cv,
                             double radius_px) {
    DepthFrame frame;
    frame.intrinsics = k;
    frame.depth.assign(static_cast<std::size_t>(k.width) * k.height, 0.0f);
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u)
            if ((u - cu) * (u - cu) + (v - cv) * (v - cv) <= radius_px * radius_px)
                frame.at(u, v) = static_cast<float>(depth_mm);
    return frame;
}

/// Rotation by exactly 90 degrees about the camera axis (entries 0 / +-1,
/// so applying it to a vector is exact in floating point).
inline Mat3 rz90_exact() {
    Mat3 r;
    r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    return r;
}

/// Remaps a depth frame by the exact in-plane 90-degree rotation. Needs
/// fx == fy and integer-valued principal point; pixel (u, v) moves to
/// (cx + cy - v, cy + u - cx), which back-projects to exactly rz90 * p.
/// Throws if any occupied pixel would leave the image.
inline DepthFrame rotate_frame_90(const DepthFrame& src) {
    const CameraIntrinsics& k = src.intrinsics;
    DepthFrame dst;
    dst.intrinsics = k;
    dst.depth.assign(src.depth.size(), 0.0f);
    const int cx = static_cast<int>(k.cx), cy = static_cast<int>(k.cy);
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            const float d = src.at(u, v);
            if (d <= 0.0f) continue;
            const int ru = cx + cy - v, rv = cy + u - cx;
            if (ru < 0 || rv < 0 || ru >= k.width || rv >= k.height)
                throw std::runtime_error("rotate_frame_90: content leaves the image");
            dst.at(ru, rv) = d;
        }
    }
    return dst;
}

inline Mat3 random_rotation(Rng& rng) {
    // Uniform-ish is irrelevant here; any proper rotation will do.
    const double a = handpose::uniform_in(rng, -M_PI, M_PI);
    const double b = handpose::uniform_in(rng, -M_PI / 2, M_PI / 2);
    const double c = handpose::uniform_in(rng, -M_PI, M_PI);
    return handpose::rot_z(a) * handpose::rot_y(b) * handpose::rot_x(c);
}

inline Vec3 random_vec(Rng& rng, double lo, double hi) {
    return {handpose::uniform_in(rng, lo, hi), handpose::uniform_in(rng, lo, hi),
            handpose::uniform_in(rng, lo, hi)};
}

inline Vec3 random_unit(Rng& rng) {
    while (true) {
        const Vec3 v = random_vec(rng, -1.0, 1.0);
        const double n = v.norm();
        if (n > 1e-3 && n <= 1.0) return v / n;
    }
}

/// Point set with exact per-point normals, free of any rasterization;
/// probes resolve by nearest neighbour. Used to test the feature-level
/// rigid invariance claims without pixel-grid effects.
struct AnalyticSet {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;

    void transform(const Mat3& r, const Vec3& t) {
        for (Vec3& p : points) p = r * p + t;
        for (Vec3& n : normals) n = r * n;
    }
};

/// Points spread over a sphere cap facing the camera, with exact outward
/// normals. `spread` < 1 keeps points away from the silhouette.
inline AnalyticSet sphere_cap_set(Rng& rng, const Vec3& center, double radius, int count,
                                  double spread = 0.8) {
    AnalyticSet set;
    set.points.reserve(count);
    set.normals.reserve(count);
    while (static_cast<int>(set.points.size()) < count) {
        const Vec3 dir = random_unit(rng);
        if (dir.z() > -spread) continue;  // keep the camera-facing cap
        set.points.push_back(center + radius * dir);
        set.normals.push_back(dir);
    }
    return set;
}

inline int nearest_in_set(const AnalyticSet& set, const Vec3& q, double accept_mm) {
    int best = -1;
    double best_d2 = accept_mm * accept_mm;
    for (std::size_t i = 0; i < set.points.size(); ++i) {
        const double d2 = (set.points[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline double set_normal_diff(const AnalyticSet& set, const Vec3& p, const Mat3& pose,
                              const Vec3& d1, const Vec3& d2, double accept_mm) {
    const int i1 = nearest_in_set(set, p + pose * d1, accept_mm);
    const int i2 = nearest_in_set(set, p + pose * d2, accept_mm);
    const Vec3 n1 = i1 < 0 ? Vec3(0, 0, 1) : set.normals[static_cast<std::size_t>(i1)];
    const Vec3 n2 = i2 < 0 ? Vec3(0, 0, 1) : set.normals[static_cast<std::size_t>(i2)];
    return n1.dot(n2);
}

inline double set_depth_diff(const AnalyticSet& set, const Vec3& p, const Mat3& pose,
                             const Vec3& d1, const Vec3& d2, double accept_mm) {
    const int i1 = nearest_in_set(set, p + pose * d1, accept_mm);
    const int i2 = nearest_in_set(set, p + pose * d2, accept_mm);
    const double z1 = i1 < 0 ? 10000.0 : set.points[static_cast<std::size_t>(i1)].z();
    const double z2 = i2 < 0 ? 10000.0 : set.points[static_cast<std::size_t>(i2)].z();
    return z1 - z2;
}

/// I0 by its power series; the independent oracle for the library's
/// Bessel-based circular statistics. Valid while the summand fits a double
/// (x below roughly 700).
inline double series_i0(double x) {
    const double t = x * x / 4.0;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 5000; ++k) {
        term *= t / (static_cast<double>(k) * k);
        sum += term;
        if (term < sum * 1e-18) break;
    }
    return sum;
}

inline double series_i1(double x) {
    const double t = x * x / 4.0;
    double term = x / 2.0, sum = term;
    for (int k = 0; k < 5000; ++k) {
        term *= t / (static_cast<double>(k + 1) * (k + 2));
        sum += term;
        if (term < sum * 1e-18) break;
    }
    return sum;
}

/// Absolute circular distance between two angles, in [0, pi].
inline double angular_diff(double a, double b) {
    double d = std::fmod(a - b, 2.0 * M_PI);
    if (d > M_PI) d -= 2.0 * M_PI;
    if (d < -M_PI) d += 2.0 * M_PI;
    return std::abs(d);
}

inline double angle_between_deg(const Vec3& a, const Vec3& b) {
    const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

/// Points whose whole pixel neighborhood within `depth` steps is interior.
inline bool deep_interior(const Cloud& cloud, std::int32_t id, int depth) {
    const auto& k = cloud.frame.intrinsics;
    const int u = cloud.pixel_u(id), v = cloud.pixel_v(id);
    for (int dv = -depth; dv <= depth; ++dv) {
        for (int du = -depth; du <= depth; ++du) {
            const int uu = u + du, vv = v + dv;
            if (uu < 0 || vv < 0 || uu >= k.width || vv >= k.height) return false;
            const std::int32_t n =
                cloud.pixel_to_point[static_cast<std::size_t>(vv) * k.width + uu];
            if (n == handpose::kBackground || cloud.is_edge[static_cast<std::size_t>(n)])
                return false;
        }
    }
    return true;
}

}  // namespace testutil
