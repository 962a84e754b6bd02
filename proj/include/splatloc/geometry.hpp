#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace splatloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Hamilton quaternion, scalar first. Not necessarily unit length.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static Quaternion identity() { return {}; }
    static Quaternion from_axis_angle(const Vec3& axis, double angle_rad);

    double norm() const;
    Quaternion normalized() const;
    Quaternion conjugate() const;
    Eigen::Vector4d coeffs() const { return {w, x, y, z}; }

    friend Quaternion operator*(const Quaternion& a, const Quaternion& b);
    friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Throws InvalidInput on a zero-norm quaternion.
Quaternion normalize(const Quaternion& q);

/// Rotation matrix of normalize(q). Throws InvalidInput on zero norm.
Mat3 quat_to_rotmat(const Quaternion& q);

/// Unit quaternion with non-negative w for a rotation matrix.
Quaternion rotmat_to_quat(const Mat3& r);

/// Rigid transform mapping world points to camera points: p_cam = R p_world + t.
struct Pose {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    Mat3 rotation_matrix() const { return quat_to_rotmat(rotation); }
    Vec3 transform(const Vec3& p) const { return rotation_matrix() * p + translation; }
    /// Camera center in world coordinates, -R^T t.
    Vec3 center() const;

    friend bool operator==(const Pose&, const Pose&) = default;
};

/// compose(a, b) applies b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Pixel coordinates have their origin at the top-left pixel center.
struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    /// Throws InvalidInput if the invariants do not hold.
    void validate() const;

    friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct Projection {
    Vec2 pixel;
    double depth;
};

inline constexpr double kDefaultDepthEpsilon = 1e-6;

/// Projects a world point. Throws BehindCamera when depth <= epsilon.
Projection project(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& k,
                   double epsilon = kDefaultDepthEpsilon);

/// Projects a camera-space point.
Projection project_camera(const Vec3& p_cam, const CameraIntrinsics& k,
                          double epsilon = kDefaultDepthEpsilon);

/// Camera-space point at the given pixel and depth. Throws InvalidInput when depth <= 0.
Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& k);

/// Angle of R_a R_b^T in degrees.
double rotation_error_deg(const Pose& a, const Pose& b);

/// Distance between camera centers, in the scene unit.
double translation_error(const Pose& a, const Pose& b);

/// Rotation vector (axis * angle) -> rotation matrix.
Mat3 so3_exp(const Vec3& omega);

Mat3 skew(const Vec3& v);

}  // namespace splatloc
