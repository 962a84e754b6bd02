#include "splatloc/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "splatloc/errors.hpp"

namespace splatloc {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n == 0.0) {
        return identity();
    }
    const Vec3 a = axis / n;
    const double s = std::sin(0.5 * angle_rad);
    return {std::cos(0.5 * angle_rad), a.x() * s, a.y() * s, a.z() * s};
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const { return normalize(*this); }

Quaternion Quaternion::conjugate() const { return {w, -x, -y, -z}; }

Quaternion operator*(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quaternion normalize(const Quaternion& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw InvalidInput("quaternion has zero or non-finite norm");
    }
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Mat3 quat_to_rotmat(const Quaternion& q_in) {
    const Quaternion q = normalize(q_in);
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Quaternion rotmat_to_quat(const Mat3& r) {
    const Eigen::Quaterniond e(r);
    Quaternion q{e.w(), e.x(), e.y(), e.z()};
    if (q.w < 0.0) {
        q = {-q.w, -q.x, -q.y, -q.z};
    }
    return normalize(q);
}

Vec3 Pose::center() const { return -(rotation_matrix().transpose() * translation); }

Pose compose(const Pose& a, const Pose& b) {
    return {normalize(a.rotation * b.rotation), a.rotation_matrix() * b.translation + a.translation};
}

Pose inverse(const Pose& p) {
    const Quaternion qi = normalize(p.rotation).conjugate();
    return {qi, -(quat_to_rotmat(qi) * p.translation)};
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw InvalidInput("focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw InvalidInput("image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw InvalidInput("principal point must lie inside the image");
    }
}

Projection project_camera(const Vec3& p, const CameraIntrinsics& k, double epsilon) {
    if (!(p.z() > epsilon)) {
        throw BehindCamera("point is behind the camera (depth " + std::to_string(p.z()) + ")");
    }
    return {Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy), p.z()};
}

Projection project(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& k, double epsilon) {
    return project_camera(pose.transform(p_world), k, epsilon);
}

Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& k) {
    if (!(depth > 0.0)) {
        throw InvalidInput("back-projection needs a positive depth");
    }
    return {(pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth};
}

double rotation_error_deg(const Pose& a, const Pose& b) {
    const Mat3 rel = a.rotation_matrix() * b.rotation_matrix().transpose();
    const double c = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
    // acos loses precision near zero; use the skew part there.
    const Vec3 s(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    const double angle = std::atan2(0.5 * s.norm(), c);
    return angle * 180.0 / M_PI;
}

double translation_error(const Pose& a, const Pose& b) { return (a.center() - b.center()).norm(); }

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Mat3 so3_exp(const Vec3& omega) {
    const double theta = omega.norm();
    const Mat3 k = skew(omega);
    if (theta < 1e-8) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    return Mat3::Identity() + std::sin(theta) / theta * k +
           (1.0 - std::cos(theta)) / (theta * theta) * k * k;
}

}  // namespace splatloc
