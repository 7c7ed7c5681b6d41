#include "handpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "handpose/geometry.hpp"

namespace handpose {

namespace {

/// Canonical template, wrist at the origin, fingers along +y, palm normal
/// +z (flexion curls toward -z). Millimetres at scale 1.
struct FingerSpec {
    Vec3 mcp;
    std::array<double, 3> len;  // proximal, middle, distal bone lengths
    std::array<double, 3> rad;  // capsule radii along the finger
};

const std::array<FingerSpec, kNumFingers>& finger_specs() {
    // Segment radii are kept equal within a finger: capsules that share an
    // endpoint blend smoothly only when their radii match (the joint cap
    // sphere is tangent to both cylinders), and radius steps would put a
    // sharp ledge at every joint.
    static const std::array<FingerSpec, kNumFingers> specs = {{
        {{-42.0, 30.0, 0.0}, {{42.0, 30.0, 24.0}}, {{10.5, 10.5, 10.5}}},  // thumb
        {{-30.0, 85.0, 0.0}, {{42.0, 25.0, 21.0}}, {{8.5, 8.5, 8.5}}},     // index
        {{0.0, 90.0, 0.0}, {{47.0, 29.0, 23.0}}, {{8.5, 8.5, 8.5}}},       // middle
        {{26.0, 85.0, 0.0}, {{43.0, 27.0, 22.0}}, {{8.0, 8.0, 8.0}}},      // ring
        {{47.0, 72.0, 0.0}, {{33.0, 21.0, 18.0}}, {{7.5, 7.5, 7.5}}},      // pinky
    }};
    return specs;
}

// Template centroid offset so that `translation` places the hand centre.
const Vec3 kHandCenter(-15.0, 95.0, 0.0);
constexpr double kWebRadius = 11.0;
constexpr double kNearMm = 150.0;

void check_range(double value, const AngleLimits& limits, const char* what) {
    if (value < limits.lo || value > limits.hi)
        throw DataError(std::string(what) + " outside anatomical limits");
}

struct Hit {
    double t = 0.0;
    Vec3 n{Vec3::Zero()};
};

/// First intersection of the ray origin + t*d (camera at the origin) with
/// the capsule surface; the normal is the exact surface gradient, unit.
std::optional<Hit> hit_capsule(const Vec3& d, const Capsule& cap) {
    const Vec3 ba = cap.b - cap.a;
    const Vec3 oa = -cap.a;
    const double baba = ba.squaredNorm();
    const double dd = d.squaredNorm();
    const double r2 = cap.radius * cap.radius;
    std::optional<Hit> best;

    if (baba > 1e-12) {
        const double bard = ba.dot(d);
        const double bam = ba.dot(oa);
        const double a = dd - bard * bard / baba;
        if (a > 1e-12) {
            const double b = 2.0 * (oa.dot(d) - bam * bard / baba);
            const double c = oa.squaredNorm() - bam * bam / baba - r2;
            const double disc = b * b - 4.0 * a * c;
            if (disc >= 0.0) {
                const double t = (-b - std::sqrt(disc)) / (2.0 * a);
                const double s = (bam + t * bard) / baba;
                if (t > 0.0 && s >= 0.0 && s <= 1.0) {
                    Hit hit;
                    hit.t = t;
                    hit.n = (t * d - (cap.a + s * ba)) / cap.radius;
                    best = hit;
                }
            }
        }
    }
    for (const Vec3* e : {&cap.a, &cap.b}) {
        const double ed = e->dot(d);
        const double disc = ed * ed - dd * (e->squaredNorm() - r2);
        if (disc < 0.0) continue;
        const double t = (ed - std::sqrt(disc)) / dd;
        if (t <= 0.0 || (best && t >= best->t)) continue;
        // A cap-sphere hit is on the capsule surface only beyond the
        // segment ends; rim cases are caught by the cylinder branch.
        if (baba > 1e-12) {
            const double s = (t * d - cap.a).dot(ba) / baba;
            if (e == &cap.a ? s > 0.0 : s < 1.0) continue;
        }
        Hit hit;
        hit.t = t;
        hit.n = (t * d - *e) / cap.radius;
        best = hit;
    }
    return best;
}

/// First intersection with a rounded box, decomposed into its 6 face
/// planes, 12 edge cylinders, and 8 corner spheres, each clipped to the
/// region where it forms the surface. The camera must be outside.
std::optional<Hit> hit_slab(const Vec3& d, const Slab& slab) {
    const Vec3 o = -(slab.rot.transpose() * slab.center);
    const Vec3 dl = slab.rot.transpose() * d;
    const Vec3& h = slab.half;
    const double r = slab.radius;
    constexpr double kEps = 1e-9;

    double best_t = std::numeric_limits<double>::infinity();
    Vec3 best_n = Vec3::Zero();

    // Faces.
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dl(a)) < 1e-15) continue;
        for (const double s : {-1.0, 1.0}) {
            const double t = (s * (h(a) + r) - o(a)) / dl(a);
            if (t <= 0.0 || t >= best_t) continue;
            const Vec3 q = o + t * dl;
            const int b = (a + 1) % 3, c = (a + 2) % 3;
            if (std::abs(q(b)) > h(b) + kEps || std::abs(q(c)) > h(c) + kEps) continue;
            best_t = t;
            best_n = Vec3::Zero();
            best_n(a) = s;
        }
    }
    // Edges.
    for (int a = 0; a < 3; ++a) {
        const int b = (a + 1) % 3, c = (a + 2) % 3;
        const double add = dl(a) * dl(a) + dl(b) * dl(b);
        if (add < 1e-15) continue;
        for (const double sa : {-1.0, 1.0}) {
            for (const double sb : {-1.0, 1.0}) {
                const double oa = o(a) - sa * h(a), ob = o(b) - sb * h(b);
                const double bq = 2.0 * (oa * dl(a) + ob * dl(b));
                const double cq = oa * oa + ob * ob - r * r;
                const double disc = bq * bq - 4.0 * add * cq;
                if (disc < 0.0) continue;
                const double t = (-bq - std::sqrt(disc)) / (2.0 * add);
                if (t <= 0.0 || t >= best_t) continue;
                const Vec3 q = o + t * dl;
                if (std::abs(q(c)) > h(c) + kEps) continue;
                if (sa * q(a) < h(a) - kEps || sb * q(b) < h(b) - kEps) continue;
                best_t = t;
                Vec3 n = Vec3::Zero();
                n(a) = (q(a) - sa * h(a)) / r;
                n(b) = (q(b) - sb * h(b)) / r;
                best_n = n;
            }
        }
    }
    // Corners.
    const double dd = dl.squaredNorm();
    for (const double sx : {-1.0, 1.0}) {
        for (const double sy : {-1.0, 1.0}) {
            for (const double sz : {-1.0, 1.0}) {
                const Vec3 corner(sx * h(0), sy * h(1), sz * h(2));
                const Vec3 oc = o - corner;
                const double bq = 2.0 * oc.dot(dl);
                const double disc = bq * bq - 4.0 * dd * (oc.squaredNorm() - r * r);
                if (disc < 0.0) continue;
                const double t = (-bq - std::sqrt(disc)) / (2.0 * dd);
                if (t <= 0.0 || t >= best_t) continue;
                const Vec3 q = o + t * dl;
                if (sx * q(0) < h(0) - kEps || sy * q(1) < h(1) - kEps || sz * q(2) < h(2) - kEps)
                    continue;
                best_t = t;
                best_n = (q - corner) / r;
            }
        }
    }
    if (!std::isfinite(best_t)) return std::nullopt;
    Hit hit;
    hit.t = best_t;
    hit.n = slab.rot * best_n;
    return hit;
}

struct PixelRect {
    int u0 = 0, u1 = -1, v0 = 0, v1 = -1;
};

/// Grows `rect` by the conservative pixel bounds of the sphere (c, r).
/// Throws OutOfFrustum when the sphere crosses the near plane.
void grow_rect_by_sphere(PixelRect& rect, const Vec3& c, double r, const CameraIntrinsics& k) {
    if (c.z() - r < kNearMm) throw OutOfFrustum("primitive crosses the near plane");
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (const double z : {c.z() - r, c.z() + r}) {
        for (const double x : {c.x() - r, c.x() + r}) {
            const double u = k.cx + k.fx * x / z;
            umin = std::min(umin, u);
            umax = std::max(umax, u);
        }
        for (const double y : {c.y() - r, c.y() + r}) {
            const double v = k.cy + k.fy * y / z;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    }
    rect.u0 = std::min(rect.u0, static_cast<int>(std::floor(umin)));
    rect.u1 = std::max(rect.u1, static_cast<int>(std::ceil(umax)));
    rect.v0 = std::min(rect.v0, static_cast<int>(std::floor(vmin)));
    rect.v1 = std::max(rect.v1, static_cast<int>(std::ceil(vmax)));
}

PixelRect empty_rect() {
    PixelRect rect;
    rect.u0 = std::numeric_limits<int>::max();
    rect.u1 = std::numeric_limits<int>::min();
    rect.v0 = std::numeric_limits<int>::max();
    rect.v1 = std::numeric_limits<int>::min();
    return rect;
}

void require_inside(const PixelRect& rect, const CameraIntrinsics& k) {
    if (rect.u0 < 0 || rect.v0 < 0 || rect.u1 >= k.width || rect.v1 >= k.height)
        throw OutOfFrustum("primitive projects outside the image");
}

PixelRect capsule_rect(const Capsule& cap, const CameraIntrinsics& k) {
    PixelRect rect = empty_rect();
    grow_rect_by_sphere(rect, cap.a, cap.radius, k);
    grow_rect_by_sphere(rect, cap.b, cap.radius, k);
    require_inside(rect, k);
    return rect;
}

PixelRect slab_rect(const Slab& slab, const CameraIntrinsics& k) {
    PixelRect rect = empty_rect();
    grow_rect_by_sphere(rect, slab.center, slab.half.norm() + slab.radius, k);
    require_inside(rect, k);
    return rect;
}

SkeletonParams sample_params(Rng& rng, const SynthConfig& config) {
    SkeletonParams p;
    const double yr = config.yaw_range_deg * kDegToRad;
    const double pr = config.pitch_range_deg * kDegToRad;
    const double rr = config.roll_range_deg * kDegToRad;
    p.yaw = yr > 0.0 ? uniform_in(rng, -yr, yr) : 0.0;
    p.pitch = pr > 0.0 ? uniform_in(rng, -pr, pr) : 0.0;
    p.roll = rr > 0.0 ? uniform_in(rng, -rr, rr) : 0.0;
    p.translation = Vec3(uniform_in(rng, -config.xy_jitter_mm, config.xy_jitter_mm),
                         uniform_in(rng, -config.xy_jitter_mm, config.xy_jitter_mm),
                         uniform_in(rng, config.min_z_mm, config.max_z_mm));
    p.scale = 1.0;
    for (FingerAngles& f : p.fingers) {
        f.abduction = uniform_in(rng, kAbductionLimits.lo, kAbductionLimits.hi);
        f.mcp_flex = uniform_in(rng, kMcpFlexLimits.lo, kMcpFlexLimits.hi);
        f.pip_flex = uniform_in(rng, kPipFlexLimits.lo, kPipFlexLimits.hi);
        f.dip_flex = uniform_in(rng, kDipFlexLimits.lo, kDipFlexLimits.hi);
    }
    return p;
}

double gauss(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1], keeps the log finite
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void append_real(std::string& line, double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %.9g", value);
    line += buf;
}

std::array<double, 26> params_to_array(const SkeletonParams& p) {
    std::array<double, 26> out{};
    out[0] = p.yaw;
    out[1] = p.pitch;
    out[2] = p.roll;
    out[3] = p.translation.x();
    out[4] = p.translation.y();
    out[5] = p.translation.z();
    for (int f = 0; f < kNumFingers; ++f) {
        out[static_cast<std::size_t>(6 + 4 * f + 0)] = p.fingers[static_cast<std::size_t>(f)].abduction;
        out[static_cast<std::size_t>(6 + 4 * f + 1)] = p.fingers[static_cast<std::size_t>(f)].mcp_flex;
        out[static_cast<std::size_t>(6 + 4 * f + 2)] = p.fingers[static_cast<std::size_t>(f)].pip_flex;
        out[static_cast<std::size_t>(6 + 4 * f + 3)] = p.fingers[static_cast<std::size_t>(f)].dip_flex;
    }
    return out;
}

SkeletonParams params_from_array(const std::array<double, 26>& a) {
    SkeletonParams p;
    p.yaw = a[0];
    p.pitch = a[1];
    p.roll = a[2];
    p.translation = Vec3(a[3], a[4], a[5]);
    p.scale = 1.0;
    for (int f = 0; f < kNumFingers; ++f) {
        p.fingers[static_cast<std::size_t>(f)].abduction = a[static_cast<std::size_t>(6 + 4 * f + 0)];
        p.fingers[static_cast<std::size_t>(f)].mcp_flex = a[static_cast<std::size_t>(6 + 4 * f + 1)];
        p.fingers[static_cast<std::size_t>(f)].pip_flex = a[static_cast<std::size_t>(6 + 4 * f + 2)];
        p.fingers[static_cast<std::size_t>(f)].dip_flex = a[static_cast<std::size_t>(6 + 4 * f + 3)];
    }
    return p;
}

std::string manifest_header() {
    std::string line = "path";
    for (const std::string& joint : joint_names())
        for (const char* axis : {"_x", "_y", "_z"}) line += " " + joint + axis;
    line += " yaw pitch roll tx ty tz";
    const char* fingers[] = {"thumb", "index", "middle", "ring", "pinky"};
    for (const char* f : fingers)
        for (const char* part : {"_abd", "_mcp_flex", "_pip_flex", "_dip_flex"})
            line += std::string(" ") + f + part;
    return line;
}

}  // namespace

Mat3 SkeletonParams::global_rotation() const { return rot_z(roll) * rot_y(yaw) * rot_x(pitch); }

void check_limits(const SkeletonParams& params) {
    if (!(params.scale > 0.0)) throw DataError("hand scale must be positive");
    for (const FingerAngles& f : params.fingers) {
        check_range(f.abduction, kAbductionLimits, "abduction");
        check_range(f.mcp_flex, kMcpFlexLimits, "MCP flexion");
        check_range(f.pip_flex, kPipFlexLimits, "PIP flexion");
        check_range(f.dip_flex, kDipFlexLimits, "DIP flexion");
    }
}

HandPose forward_kinematics(const SkeletonParams& params) {
    check_limits(params);
    const Vec3 palm_normal(0.0, 0.0, 1.0);
    std::array<Vec3, kNumJoints> local;
    local[0] = Vec3::Zero();
    for (int f = 0; f < kNumFingers; ++f) {
        const FingerSpec& spec = finger_specs()[static_cast<std::size_t>(f)];
        const FingerAngles& ang = params.fingers[static_cast<std::size_t>(f)];
        local[static_cast<std::size_t>(joint_index(f, 0))] = spec.mcp;
        // Base direction away from the wrist, swung in the palm plane by
        // the abduction angle; flexion then rotates it toward -z about a
        // single hinge, keeping the finger planar.
        const Vec3 d0 = spec.mcp.normalized();
        const double ca = std::cos(ang.abduction), sa = std::sin(ang.abduction);
        const Vec3 d = d0 * ca + palm_normal.cross(d0) * sa;
        const std::array<double, 3> flex = {ang.mcp_flex, ang.pip_flex, ang.dip_flex};
        Vec3 p = spec.mcp;
        double cum = 0.0;
        for (int part = 0; part < 3; ++part) {
            cum += flex[static_cast<std::size_t>(part)];
            const Vec3 dir = d * std::cos(cum) - palm_normal * std::sin(cum);
            p += spec.len[static_cast<std::size_t>(part)] * dir;
            local[static_cast<std::size_t>(joint_index(f, part + 1))] = p;
        }
    }
    const Mat3 r = params.global_rotation();
    HandPose out;
    for (int j = 0; j < kNumJoints; ++j)
        out.joints[static_cast<std::size_t>(j)] =
            r * (params.scale * (local[static_cast<std::size_t>(j)] - kHandCenter)) +
            params.translation;
    return out;
}

CapsuleModel build_capsules(const HandPose& pose, double scale) {
    CapsuleModel model;
    model.capsules.reserve(16);
    for (int f = 0; f < kNumFingers; ++f) {
        const FingerSpec& spec = finger_specs()[static_cast<std::size_t>(f)];
        for (int part = 0; part < 3; ++part)
            model.capsules.push_back({pose.joints[static_cast<std::size_t>(joint_index(f, part))],
                                      pose.joints[static_cast<std::size_t>(joint_index(f, part + 1))],
                                      spec.rad[static_cast<std::size_t>(part)] * scale});
    }
    const Vec3& wrist = pose.joints[0];
    model.capsules.push_back({pose.joints[static_cast<std::size_t>(joint_index(0, 0))],
                              pose.joints[static_cast<std::size_t>(joint_index(1, 0))],
                              kWebRadius * scale});

    // Palm slab in the rigid frame spanned by the wrist and the MCP arc
    // (y toward the middle MCP, z the palm normal).
    const Vec3& middle = pose.joints[static_cast<std::size_t>(joint_index(2, 0))];
    const Vec3& index = pose.joints[static_cast<std::size_t>(joint_index(1, 0))];
    const Vec3& ring = pose.joints[static_cast<std::size_t>(joint_index(3, 0))];
    Slab palm;
    const Vec3 y = (middle - wrist).normalized();
    Vec3 z = (ring - wrist).cross(index - wrist).normalized();
    z = (z - z.dot(y) * y).normalized();
    const Vec3 x = y.cross(z);
    palm.rot.col(0) = x;
    palm.rot.col(1) = y;
    palm.rot.col(2) = z;
    palm.center = wrist + (46.0 * scale) * y + (8.0 * scale) * x;
    palm.half = scale * Vec3(36.0, 36.0, 3.5);
    palm.radius = 9.0 * scale;
    model.slabs.push_back(palm);
    return model;
}

DepthFrame render_capsules(const CapsuleModel& model, const CameraIntrinsics& camera,
                           std::vector<Vec3>* normals) {
    const std::size_t n = static_cast<std::size_t>(camera.width) * camera.height;
    DepthFrame frame;
    frame.intrinsics = camera;
    frame.depth.assign(n, 0.0f);
    if (normals) normals->assign(n, Vec3::Zero());
    std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());

    // All rects are computed up front so a frame is either rendered whole
    // or rejected whole.
    std::vector<PixelRect> cap_rects, slab_rects;
    for (const Capsule& cap : model.capsules) cap_rects.push_back(capsule_rect(cap, camera));
    for (const Slab& slab : model.slabs) slab_rects.push_back(slab_rect(slab, camera));

    const auto splat = [&](const PixelRect& rect, const auto& primitive, const auto& intersect) {
        for (int v = rect.v0; v <= rect.v1; ++v) {
            for (int u = rect.u0; u <= rect.u1; ++u) {
                // dir.z = 1, so the ray parameter t is the depth in mm.
                const Vec3 dir((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
                const std::optional<Hit> hit = intersect(dir, primitive);
                if (!hit) continue;
                const std::size_t idx = static_cast<std::size_t>(v) * camera.width + u;
                if (hit->t < zbuf[idx]) {
                    zbuf[idx] = hit->t;
                    if (normals) (*normals)[idx] = hit->n;
                }
            }
        }
    };
    for (std::size_t i = 0; i < model.capsules.size(); ++i)
        splat(cap_rects[i], model.capsules[i], hit_capsule);
    for (std::size_t i = 0; i < model.slabs.size(); ++i) splat(slab_rects[i], model.slabs[i], hit_slab);

    for (std::size_t i = 0; i < n; ++i)
        if (std::isfinite(zbuf[i])) frame.depth[i] = static_cast<float>(zbuf[i]);
    return frame;
}

RenderResult render_depth(const SkeletonParams& params, const CameraIntrinsics& camera) {
    RenderResult res;
    res.pose = forward_kinematics(params);
    res.frame = render_capsules(build_capsules(res.pose, params.scale), camera, &res.normals);
    return res;
}

std::vector<ManifestEntry> generate_dataset(const SynthConfig& config, const std::string& out_dir) {
    if (config.count <= 0) throw DataError("frame count must be positive");
    std::filesystem::create_directories(out_dir);

    std::vector<ManifestEntry> entries;
    entries.reserve(static_cast<std::size_t>(config.count));
    std::string manifest = manifest_header() + "\n";

    for (int i = 0; i < config.count; ++i) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const SkeletonParams params = sample_params(rng, config);
            RenderResult res;
            try {
                res = render_depth(params, config.camera);
            } catch (const OutOfFrustum&) {
                continue;
            }
            if (config.noise_mm > 0.0)
                for (float& d : res.frame.depth)
                    if (d > 0.0f) d += static_cast<float>(config.noise_mm * gauss(rng));

            char name[32];
            std::snprintf(name, sizeof(name), "depth_%05d.hcdf", i);
            save_depth_frame((std::filesystem::path(out_dir) / name).string(), res.frame);

            std::string line = name;
            for (const Vec3& j : res.pose.joints)
                for (int a = 0; a < 3; ++a) append_real(line, j(a));
            for (const double value : params_to_array(params)) append_real(line, value);
            manifest += line + "\n";

            ManifestEntry entry;
            entry.path = (std::filesystem::path(out_dir) / name).string();
            entry.pose = res.pose;
            entry.params = params;
            entries.push_back(std::move(entry));
            placed = true;
        }
        if (!placed) throw DataError("failed to place the hand inside the frustum");
    }

    std::ofstream out(std::filesystem::path(out_dir) / "manifest.txt", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + out_dir);
    out << manifest;
    return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path);
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();

    std::vector<ManifestEntry> entries;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("path", 0) == 0) continue;  // header
        }
        std::istringstream ss(line);
        ManifestEntry entry;
        std::string file;
        if (!(ss >> file)) throw DataError("malformed manifest line");
        std::array<double, static_cast<std::size_t>(kNumJoints) * 3 + 26> values{};
        for (double& value : values)
            if (!(ss >> value)) throw DataError("malformed manifest line: " + line);
        for (int j = 0; j < kNumJoints; ++j)
            entry.pose.joints[static_cast<std::size_t>(j)] =
                Vec3(values[static_cast<std::size_t>(3 * j)], values[static_cast<std::size_t>(3 * j + 1)],
                     values[static_cast<std::size_t>(3 * j + 2)]);
        std::array<double, 26> params{};
        std::copy(values.begin() + kNumJoints * 3, values.end(), params.begin());
        entry.params = params_from_array(params);
        const std::filesystem::path file_path(file);
        entry.path = file_path.is_absolute() ? file_path.string() : (dir / file_path).string();
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace handpose
