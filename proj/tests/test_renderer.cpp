#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "splatloc/errors.hpp"
#include "splatloc/renderer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace splatloc;

namespace {

const CameraIntrinsics kCam{100.0, 100.0, 50.0, 50.0, 100, 100};

Gaussian splat_at(const Vec3& p, double sigma, double opacity, const Vec3& color, int v = 0) {
    Gaussian g;
    g.position = p;
    g.scale = Vec3::Constant(sigma);
    g.opacity = opacity;
    g.color = color;
    g.feature = Eigen::VectorXd::Zero(v);
    return g;
}

}  // namespace

TEST_CASE("project_gaussian isotropic on the optical axis") {
    const double sigma = 0.05, z = 2.0;
    const auto p = project_gaussian(splat_at({0, 0, z}, sigma, 1.0, Vec3::Zero()), Pose::identity(), kCam, 0.0);
    REQUIRE(p);
    const double e = 100.0 * sigma / z;
    CHECK(p->covariance(0, 0) == doctest::Approx(e * e));
    CHECK(p->covariance(1, 1) == doctest::Approx(e * e));
    CHECK(std::abs(p->covariance(0, 1)) < 1e-12);
    CHECK(p->center.isApprox(Vec2(50, 50)));
    CHECK(p->depth == doctest::Approx(z));

    const auto floored = project_gaussian(splat_at({0, 0, z}, sigma, 1.0, Vec3::Zero()), Pose::identity(), kCam);
    CHECK(floored->covariance(0, 0) == doctest::Approx(e * e + kCovarianceFloor));
}

TEST_CASE("project_gaussian culls splats behind the camera") {
    CHECK_FALSE(project_gaussian(splat_at({0, 0, -1}, 0.1, 1.0, Vec3::Zero()), Pose::identity(), kCam));
}

TEST_CASE("project_gaussian covariance eigenvalues respect the floor") {
    std::mt19937_64 rng(11);
    const Scene s = test::random_scene(rng, 200, 0, kCam);
    for (const Gaussian& g : s.gaussians) {
        const auto p = project_gaussian(g, test::random_pose(rng), kCam);
        if (!p) continue;
        Eigen::SelfAdjointEigenSolver<Mat2> es(p->covariance);
        CHECK(es.eigenvalues().minCoeff() >= kCovarianceFloor - 1e-12);
    }
}

TEST_CASE("project_gaussian matches Monte-Carlo propagation through project") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Gaussian g;
        g.position = test::random_vec3(rng, -0.5, 0.5);
        g.rotation = test::random_unit_quaternion(rng);
        g.scale = test::random_vec3(rng, 0.002, 0.01);
        g.feature.resize(0);
        Pose pose{test::random_unit_quaternion(rng), Vec3::Zero()};
        pose.translation = Vec3(0.1, -0.1, 3.0) - pose.rotation_matrix() * g.position;
        const auto p = project_gaussian(g, pose, kCam, 0.0);
        REQUIRE(p);

        const Mat3 rs = quat_to_rotmat(g.rotation) * g.scale.asDiagonal();
        const int samples = 200000;
        Vec2 mean = Vec2::Zero();
        Mat2 second = Mat2::Zero();
        std::vector<Vec2> px(samples);
        for (auto& x : px) {
            x = project(g.position + rs * Vec3(n(rng), n(rng), n(rng)), pose, kCam).pixel;
            mean += x;
        }
        mean /= samples;
        for (const auto& x : px) second += (x - mean) * (x - mean).transpose();
        second /= samples - 1;
        CHECK((second - p->covariance).norm() / p->covariance.norm() < 0.05);
    }
}

TEST_CASE("render of an empty scene is background") {
    Scene s;
    s.feature_dim = 4;
    s.background = Vec3(0.2, 0.4, 0.6);
    const RenderOutput out = render(s, Pose::identity(), kCam);
    for (int r = 0; r < kCam.height; ++r) {
        for (int c = 0; c < kCam.width; ++c) {
            CHECK(out.rgb.at(r, c, 1) == 0.4);
            CHECK(out.alpha.at(r, c, 0) == 0.0);
            CHECK(out.depth.at(r, c, 0) == kDepthSentinel);
            CHECK(out.features.at(r, c, 3) == 0.0);
        }
    }
    CHECK(compositing_weights(s, Pose::identity(), kCam, 3, 3).empty());
}

TEST_CASE("single opaque splat centered on a pixel") {
    Scene s;
    s.background = Vec3(0.9, 0.9, 0.9);
    s.gaussians.push_back(splat_at({0, 0, 2.0}, 0.05, 1.0, Vec3(0.1, 0.5, 0.3)));
    const RenderOutput out = render(s, Pose::identity(), kCam);
    CHECK(out.rgb.at(50, 50, 0) == 0.1);
    CHECK(out.rgb.at(50, 50, 1) == 0.5);
    CHECK(out.rgb.at(50, 50, 2) == 0.3);
    CHECK(out.alpha.at(50, 50, 0) == 1.0);
    CHECK(out.depth.at(50, 50, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(out.depth.at(0, 0, 0) == kDepthSentinel);
}

TEST_CASE("two coincident half-transparent splats composite front to back") {
    Scene s;
    const Vec3 c1(1.0, 0.0, 0.2), c2(0.0, 1.0, 0.6);
    s.gaussians.push_back(splat_at({0, 0, 3.0}, 0.06, 0.5, c2));
    s.gaussians.push_back(splat_at({0, 0, 2.0}, 0.04, 0.5, c1));
    const RenderOutput out = render(s, Pose::identity(), kCam);
    const Vec3 expected = 0.5 * c1 + 0.25 * c2;
    for (int c = 0; c < 3; ++c) CHECK(out.rgb.at(50, 50, c) == doctest::Approx(expected[c]).epsilon(1e-15));
    CHECK(out.alpha.at(50, 50, 0) == doctest::Approx(0.75));
    CHECK(out.depth.at(50, 50, 0) == doctest::Approx((0.5 * 2.0 + 0.25 * 3.0) / 0.75));
}

TEST_CASE("compositing weights") {
    Scene s;
    s.gaussians.push_back(splat_at({0, 0, 2.0}, 0.05, 0.4, Vec3(1, 1, 1)));
    const auto w = compositing_weights(s, Pose::identity(), kCam, 50, 50);
    REQUIRE(w.size() == 1);
    CHECK(w[0].gaussian == 0);
    CHECK(w[0].weight == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(compositing_weights(s, Pose::identity(), kCam, 100, 0), InvalidInput);
}

TEST_CASE("render is reproduced by compositing weights") {
    std::mt19937_64 rng(13);
    const CameraIntrinsics cam = test::small_camera(40, 30);
    for (int trial = 0; trial < 5; ++trial) {
        const Scene s = test::random_scene(rng, 40, 3, cam);
        const RenderOutput out = render(s, Pose::identity(), cam);
        for (int r = 0; r < cam.height; r += 3) {
            for (int c = 0; c < cam.width; c += 3) {
                Vec3 color = Vec3::Zero();
                double sum = 0.0;
                for (const auto& [idx, wt] : compositing_weights(s, Pose::identity(), cam, c, r)) {
                    CHECK(wt >= 0.0);
                    color += wt * s.gaussians[idx].color;
                    sum += wt;
                }
                CHECK(sum <= 1.0 + 1e-12);
                color += s.background * (1.0 - sum);
                for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(color[ch] - out.rgb.at(r, c, ch)) < 1e-9);
            }
        }
    }
}

TEST_CASE("trace transmittance is non-increasing and within [0,1]") {
    std::mt19937_64 rng(14);
    const CameraIntrinsics cam = test::small_camera(32, 32);
    const Scene s = test::random_scene(rng, 50, 2, cam);
    RenderTrace trace;
    const RenderOutput out = render_traced(s, Pose::identity(), cam, Channels::all, trace);
    for (int r = 0; r < cam.height; ++r) {
        for (int c = 0; c < cam.width; ++c) {
            double prev = 1.0;
            for (const auto& e : trace.at(r, c)) {
                CHECK(e.transmittance <= prev);
                CHECK(e.transmittance >= 0.0);
                CHECK(e.alpha_hat == doctest::Approx(s.gaussians[e.gaussian].opacity * e.falloff));
                prev = e.transmittance;
            }
            CHECK(out.alpha.at(r, c, 0) >= 0.0);
            CHECK(out.alpha.at(r, c, 0) <= 1.0);
            const bool valid = out.alpha.at(r, c, 0) >= kDepthAlphaMin;
            CHECK(valid == (out.depth.at(r, c, 0) != kDepthSentinel));
        }
    }
}

TEST_CASE("channel selection") {
    std::mt19937_64 rng(15);
    const CameraIntrinsics cam = test::small_camera(20, 20);
    const Scene s = test::random_scene(rng, 10, 2, cam);
    const RenderOutput rgb_only = render(s, Pose::identity(), cam, Channels::rgb);
    CHECK(rgb_only.features.empty());
    CHECK(rgb_only.depth.empty());
    CHECK(rgb_only.rgb == render(s, Pose::identity(), cam).rgb);
}

TEST_CASE("scene file round trip") {
    std::mt19937_64 rng(16);
    Scene s = test::random_scene(rng, 7, 5, kCam);
    const auto path = std::filesystem::temp_directory_path() / "splatloc_scene_test.splat";
    write_scene(path, s);
    const Scene back = read_scene(path);
    REQUIRE(back.size() == s.size());
    CHECK(back.feature_dim == 5);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK((back.gaussians[i].position - s.gaussians[i].position).norm() < 1e-6);
        CHECK((back.gaussians[i].feature - s.gaussians[i].feature).norm() < 1e-6);
        CHECK(std::abs(back.gaussians[i].opacity - s.gaussians[i].opacity) < 1e-7);
    }
    // float32 values survive a second round trip exactly
    write_scene(path, back);
    CHECK(read_scene(path) == back);

    s.gaussians[0].feature.resize(4);
    CHECK_THROWS_AS(write_scene(path, s), InvalidInput);
    std::filesystem::remove(path);
}

TEST_CASE("rendering invariants on random scenes") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const test::RenderInvariants r = test::check_render_invariants(seed);
        INFO("seed " << seed);
        CHECK(r.permutation <= 1e-9);
        CHECK(r.transmittance_rise <= 0.0);
        CHECK(r.weight_excess <= 1e-9);
        CHECK(r.sharing <= 1e-9);
        CHECK(r.occluder <= 1e-9);
    }
}
