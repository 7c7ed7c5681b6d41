#pragma once

#include <Eigen/Dense>
#include <vector>

#include "handpose/common.hpp"

namespace handpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid motion p -> rotation * p + translation. Millimetres throughout.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    RigidTransform inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }

    /// Composition: (*this) after other, i.e. apply(other.apply(p)).
    RigidTransform compose(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }
};

/// Local reference frame: columns of `pose` are the x, y, z axes expressed
/// in camera coordinates, `origin` is the frame origin.
struct LocalFrame {
    Mat3 pose = Mat3::Identity();
    Vec3 origin = Vec3::Zero();

    Vec3 x_axis() const { return pose.col(0); }
    Vec3 y_axis() const { return pose.col(1); }
    Vec3 z_axis() const { return pose.col(2); }
};

/// Spherical parametrization of a unit vector: theta is the polar angle
/// measured from the camera +z axis in [0, pi], phi the azimuth in the
/// image plane in (-pi, pi] (atan2 convention). phi = 0 at the poles.
struct Spherical {
    double theta = 0.0;
    double phi = 0.0;
};

bool is_rotation(const Mat3& r, double tol = 1e-9);
bool is_right_handed(const Mat3& r, double tol = 1e-6);

/// Builds a frame from (possibly non-unit) axes. z is kept exact, y is
/// projected orthogonal to z, x is recomputed as y x z.
/// Throws DegenerateFrame when two input axes are parallel within 1e-6.
LocalFrame frame_from_axes(const Vec3& x, const Vec3& y, const Vec3& z, const Vec3& origin);

/// Camera-frame offset -> frame-local offset (R^T * o).
inline Vec3 to_local(const LocalFrame& frame, const Vec3& offset) {
    return frame.pose.transpose() * offset;
}

/// Frame-local offset -> camera-frame offset (R * o).
inline Vec3 from_local(const LocalFrame& frame, const Vec3& offset) {
    return frame.pose * offset;
}

Spherical spherical_from_unit(const Vec3& n);
Vec3 unit_from_spherical(const Spherical& s);

/// Least-squares rigid alignment of corresponded point sets (no scaling):
/// minimizes sum ||T(src_i) - dst_i||^2 by SVD of the cross-covariance,
/// with the determinant corrected so the result is a proper rotation.
/// Throws DegenerateConfiguration when the points are collinear.
RigidTransform kabsch_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);
Mat3 rot_axis(const Vec3& unit_axis, double angle);

}  // namespace handpose
