#include "handpose/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "binio.hpp"

namespace handpose {

using detail::read_le;
using detail::write_le;

void save_depth_frame(const std::string& path, const DepthFrame& frame) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    const auto& k = frame.intrinsics;
    out.write("HCDF", 4);
    write_le<std::uint16_t>(out, 1);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(k.width));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(k.height));
    write_le<float>(out, static_cast<float>(k.fx));
    write_le<float>(out, static_cast<float>(k.fy));
    write_le<float>(out, static_cast<float>(k.cx));
    write_le<float>(out, static_cast<float>(k.cy));
    write_le<float>(out, static_cast<float>(k.depth_scale));
    for (float d : frame.depth) {
        const double units = static_cast<double>(d) / k.depth_scale;
        const auto q = static_cast<std::uint16_t>(std::clamp(std::lround(units), 0l, 65535l));
        write_le<std::uint16_t>(out, q);
    }
    if (!out) throw DataError("write failed: " + path);
}

DepthFrame load_depth_frame(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HCDF", 4) != 0) throw DataError("not a depth frame file: " + path);
    if (read_le<std::uint16_t>(in) != 1) throw DataError("unsupported depth frame version: " + path);

    DepthFrame frame;
    auto& k = frame.intrinsics;
    k.width = static_cast<int>(read_le<std::uint32_t>(in));
    k.height = static_cast<int>(read_le<std::uint32_t>(in));
    k.fx = read_le<float>(in);
    k.fy = read_le<float>(in);
    k.cx = read_le<float>(in);
    k.cy = read_le<float>(in);
    k.depth_scale = read_le<float>(in);
    if (k.width <= 0 || k.height <= 0 || k.fx <= 0.0 || k.fy <= 0.0)
        throw DataError("bad depth frame header: " + path);

    const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
    frame.depth.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        frame.depth[i] = static_cast<float>(read_le<std::uint16_t>(in) * k.depth_scale);
    if (!in) throw DataError("truncated depth frame file: " + path);
    return frame;
}

Cloud backproject(const DepthFrame& frame) {
    const auto& k = frame.intrinsics;
    Cloud cloud;
    cloud.frame = frame;
    cloud.pixel_to_point.assign(static_cast<std::size_t>(k.width) * k.height, kBackground);

    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            const float d = frame.at(u, v);
            if (d <= 0.0f) continue;
            const double depth = d;
            cloud.pixel_to_point[static_cast<std::size_t>(v) * k.width + u] =
                static_cast<std::int32_t>(cloud.points.size());
            cloud.points.emplace_back((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth);
            cloud.point_pixel.push_back(v * k.width + u);
        }
    }
    if (cloud.points.empty()) throw EmptyFrame("backproject: no valid pixels");
    cloud.is_edge.assign(cloud.points.size(), 0);
    return cloud;
}

void classify_edges(Cloud& cloud, double jump_mm) {
    const auto& k = cloud.frame.intrinsics;
    cloud.is_edge.assign(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const int u = cloud.pixel_u(static_cast<std::int32_t>(i));
        const int v = cloud.pixel_v(static_cast<std::int32_t>(i));
        const double d = cloud.frame.at(u, v);
        bool edge = false;
        for (int dv = -1; dv <= 1 && !edge; ++dv) {
            for (int du = -1; du <= 1 && !edge; ++du) {
                if (du == 0 && dv == 0) continue;
                const int uu = u + du, vv = v + dv;
                if (uu < 0 || vv < 0 || uu >= k.width || vv >= k.height) {
                    edge = true;
                } else {
                    const double dn = cloud.frame.at(uu, vv);
                    if (dn <= 0.0 || std::abs(dn - d) > jump_mm) edge = true;
                }
            }
        }
        cloud.is_edge[i] = edge ? 1 : 0;
    }
}

std::vector<std::int32_t> radius_search(const Cloud& cloud, const Vec3& center, double radius_mm) {
    std::vector<std::int32_t> result;
    const auto& k = cloud.frame.intrinsics;
    const double z0 = std::max(center.z() - radius_mm, 1e-3);
    const double z1 = center.z() + radius_mm;
    if (z1 <= 0.0) return result;

    // Conservative pixel window: project the corners of the axis-aligned
    // bounding box of the query ball (extrema are attained at corners).
    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    for (double x : {center.x() - radius_mm, center.x() + radius_mm}) {
        for (double y : {center.y() - radius_mm, center.y() + radius_mm}) {
            for (double z : {z0, z1}) {
                const double u = k.cx + k.fx * x / z;
                const double v = k.cy + k.fy * y / z;
                umin = std::min(umin, u);
                umax = std::max(umax, u);
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
        }
    }
    const int u0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
    const int u1 = std::min(k.width - 1, static_cast<int>(std::ceil(umax)) + 1);
    const int v0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
    const int v1 = std::min(k.height - 1, static_cast<int>(std::ceil(vmax)) + 1);

    const double r2 = radius_mm * radius_mm;
    for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
            const std::int32_t id = cloud.pixel_to_point[static_cast<std::size_t>(v) * k.width + u];
            if (id == kBackground) continue;
            if ((cloud.points[id] - center).squaredNorm() <= r2) result.push_back(id);
        }
    }
    return result;
}

std::vector<std::int32_t> radius_neighbors(const Cloud& cloud, std::int32_t index, double radius_mm) {
    return radius_search(cloud, cloud.points[index], radius_mm);
}

}  // namespace handpose
