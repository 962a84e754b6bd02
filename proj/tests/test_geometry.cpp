#include <cmath>
#include <random>

#include "doctest.h"
#include "splatloc/errors.hpp"
#include "splatloc/geometry.hpp"
#include "test_support.hpp"

using namespace splatloc;
using splatloc::test::random_pose;
using splatloc::test::random_unit_quaternion;

namespace {
const CameraIntrinsics kCam{100.0, 100.0, 50.0, 50.0, 100, 100};
}

TEST_CASE("quat_to_rotmat known rotations") {
    CHECK(quat_to_rotmat(Quaternion::identity()).isApprox(Mat3::Identity(), 1e-15));
    const Mat3 r = quat_to_rotmat({0, 0, 0, 1});
    CHECK((r - Vec3(-1, -1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-15);
    CHECK_THROWS_AS(quat_to_rotmat({0, 0, 0, 0}), InvalidInput);
}

TEST_CASE("quat_to_rotmat is a proper rotation for random quaternions") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const Mat3 r = quat_to_rotmat(random_unit_quaternion(rng));
        CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-9);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
    }
}

TEST_CASE("quaternion sign and scale do not change the rotation") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> s(0.01, 100.0);
    for (int i = 0; i < 100; ++i) {
        const Quaternion q = random_unit_quaternion(rng);
        const double k = s(rng);
        const Quaternion scaled{q.w * k, q.x * k, q.y * k, q.z * k};
        const Quaternion neg{-q.w, -q.x, -q.y, -q.z};
        CHECK((quat_to_rotmat(scaled) - quat_to_rotmat(q)).norm() < 1e-12);
        CHECK((quat_to_rotmat(neg) - quat_to_rotmat(q)).norm() < 1e-12);
        CHECK(std::abs(normalize(scaled).norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("rotmat_to_quat inverts quat_to_rotmat") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Quaternion q = random_unit_quaternion(rng);
        CHECK((quat_to_rotmat(rotmat_to_quat(quat_to_rotmat(q))) - quat_to_rotmat(q)).norm() < 1e-12);
    }
}

TEST_CASE("project") {
    auto a = project({0, 0, 1}, Pose::identity(), kCam);
    CHECK(a.pixel.x() == doctest::Approx(50.0));
    CHECK(a.pixel.y() == doctest::Approx(50.0));
    CHECK(a.depth == doctest::Approx(1.0));
    auto b = project({0.1, 0, 1}, Pose::identity(), kCam);
    CHECK(b.pixel.x() == doctest::Approx(60.0));
    CHECK(b.pixel.y() == doctest::Approx(50.0));
    CHECK_THROWS_AS(project({0, 0, -1}, Pose::identity(), kCam), BehindCamera);
    CHECK_THROWS_AS(project({0, 0, 1e-7}, Pose::identity(), kCam), BehindCamera);
    CHECK_NOTHROW(project({0, 0, 1e-7}, Pose::identity(), kCam, 1e-8));
}

TEST_CASE("backproject") {
    CHECK(backproject({50, 50}, 2.0, kCam).isApprox(Vec3(0, 0, 2)));
    CHECK(backproject({60, 50}, 1.0, kCam).isApprox(Vec3(0.1, 0, 1)));
    CHECK_THROWS_AS(backproject({1, 1}, 0.0, kCam), InvalidInput);
    CHECK_THROWS_AS(backproject({1, 1}, -1.0, kCam), InvalidInput);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> px(0.0, 99.0), z(1e-3, 50.0);
    for (int i = 0; i < 500; ++i) {
        const Vec2 p(px(rng), px(rng));
        const double d = z(rng);
        const auto back = project(backproject(p, d, kCam), Pose::identity(), kCam);
        CHECK((back.pixel - p).norm() < 1e-9);
        CHECK(std::abs(back.depth - d) < 1e-9);
    }
}

TEST_CASE("compose and inverse") {
    std::mt19937_64 rng(5);
    const Pose id = Pose::identity();
    CHECK(inverse(id).translation.norm() == 0.0);
    CHECK(rotation_error_deg(inverse(id), id) == 0.0);
    for (int i = 0; i < 100; ++i) {
        const Pose p = random_pose(rng), q = random_pose(rng), r = random_pose(rng);
        const Pose pi = compose(p, id);
        CHECK(rotation_error_deg(pi, p) < 1e-9);
        CHECK((pi.translation - p.translation).norm() < 1e-12);

        const Pose round = compose(p, inverse(p));
        CHECK(rotation_error_deg(round, id) < 1e-9);
        CHECK(round.translation.norm() < 1e-9);

        const Vec3 x = test::random_vec3(rng, -5, 5);
        CHECK((compose(inverse(p), p).transform(x) - x).norm() < 1e-9);
        CHECK((compose(p, q).transform(x) - p.transform(q.transform(x))).norm() < 1e-9);

        const Pose left = compose(compose(p, q), r), right = compose(p, compose(q, r));
        CHECK(rotation_error_deg(left, right) < 1e-9);
        CHECK((left.translation - right.translation).norm() < 1e-9);
    }
}

TEST_CASE("pose error metrics") {
    const Pose a = Pose::identity();
    Pose b{Quaternion::from_axis_angle(Vec3::UnitY(), 3.0 * M_PI / 180.0), Vec3::Zero()};
    CHECK(rotation_error_deg(a, b) == doctest::Approx(3.0).epsilon(1e-12));
    Pose c{Quaternion::identity(), Vec3(0.03, 0.0, 0.04)};
    CHECK(translation_error(a, c) == doctest::Approx(0.05));
    CHECK(rotation_error_deg(b, b) == 0.0);
}

TEST_CASE("intrinsics validation") {
    CHECK_NOTHROW(kCam.validate());
    CHECK_THROWS_AS((CameraIntrinsics{0, 1, 1, 1, 4, 4}.validate()), InvalidInput);
    CHECK_THROWS_AS((CameraIntrinsics{1, 1, 4, 1, 4, 4}.validate()), InvalidInput);
}
