#include "handpose/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace handpose {

bool is_rotation(const Mat3& r, double tol) {
    const Mat3 residual = r.transpose() * r - Mat3::Identity();
    if (residual.cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(r.determinant() - 1.0) <= tol;
}

bool is_right_handed(const Mat3& r, double tol) {
    return (r.col(0).cross(r.col(1)) - r.col(2)).norm() <= tol;
}

namespace {

bool parallel_within(const Vec3& a, const Vec3& b, double tol) {
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) return true;
    return a.cross(b).norm() / denom <= tol;
}

}  // namespace

LocalFrame frame_from_axes(const Vec3& x, const Vec3& y, const Vec3& z, const Vec3& origin) {
    if (x.norm() == 0.0 || y.norm() == 0.0 || z.norm() == 0.0)
        throw DegenerateFrame("frame_from_axes: zero axis");
    if (parallel_within(x, y, 1e-6) || parallel_within(y, z, 1e-6) || parallel_within(x, z, 1e-6))
        throw DegenerateFrame("frame_from_axes: parallel axes");

    const Vec3 zn = z.normalized();
    Vec3 yn = y - y.dot(zn) * zn;  // z is authoritative, y gets corrected
    yn.normalize();
    const Vec3 xn = yn.cross(zn);

    LocalFrame frame;
    frame.pose.col(0) = xn;
    frame.pose.col(1) = yn;
    frame.pose.col(2) = zn;
    frame.origin = origin;
    return frame;
}

Spherical spherical_from_unit(const Vec3& n) {
    Spherical s;
    s.theta = std::acos(std::clamp(n.z(), -1.0, 1.0));
    const bool at_pole = n.x() == 0.0 && n.y() == 0.0;
    s.phi = at_pole ? 0.0 : std::atan2(n.y(), n.x());
    return s;
}

Vec3 unit_from_spherical(const Spherical& s) {
    const double st = std::sin(s.theta);
    return {st * std::cos(s.phi), st * std::sin(s.phi), std::cos(s.theta)};
}

RigidTransform kabsch_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    if (src.size() != dst.size()) throw LengthMismatch("kabsch_align: size mismatch");
    if (src.size() < 3) throw DegenerateConfiguration("kabsch_align: need at least 3 points");

    Vec3 src_centroid = Vec3::Zero();
    Vec3 dst_centroid = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        src_centroid += src[i];
        dst_centroid += dst[i];
    }
    src_centroid /= static_cast<double>(src.size());
    dst_centroid /= static_cast<double>(dst.size());

    Mat3 cross_cov = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i)
        cross_cov += (src[i] - src_centroid) * (dst[i] - dst_centroid).transpose();

    Eigen::JacobiSVD<Mat3> svd(cross_cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (sv(1) <= 1e-9 * std::max(sv(0), 1e-300))
        throw DegenerateConfiguration("kabsch_align: collinear points");

    Mat3 d = Mat3::Identity();
    // Reflection guard: pick the proper rotation among the SVD solutions.
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

    RigidTransform t;
    t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    t.translation = dst_centroid - t.rotation * src_centroid;
    return t;
}

Mat3 rot_x(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}

Mat3 rot_y(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

Mat3 rot_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

Mat3 rot_axis(const Vec3& unit_axis, double angle) {
    Eigen::AngleAxisd aa(angle, unit_axis);
    return aa.toRotationMatrix();
}

}  // namespace handpose
