#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "splatloc/descriptors.hpp"
#include "splatloc/errors.hpp"
#include "splatloc/io.hpp"
#include "splatloc/renderer.hpp"
#include "test_support.hpp"

using namespace splatloc;

namespace {

const CameraIntrinsics kCam{60.0, 60.0, 24.0, 18.0, 48, 36};

Scene descriptor_scene(std::uint64_t seed, int n, int v) {
    std::mt19937_64 rng(seed);
    Scene s = test::random_scene(rng, n, v, kCam);
    for (std::size_t i = 0; i < s.size(); ++i) s.gaussians[i].feature = procedural_descriptor(seed, i, v);
    return s;
}

QueryImage query_at(const Pose& pose, const std::string& name = "q") {
    return {name, Image(kCam.width, kCam.height, 3, 0.5), pose};
}

std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("procedural descriptors are deterministic unit vectors") {
    for (std::size_t i = 0; i < 20; ++i) {
        const auto a = procedural_descriptor(7, i, 16);
        CHECK(a.norm() == doctest::Approx(1.0));
        CHECK(a == procedural_descriptor(7, i, 16));
        CHECK(a != procedural_descriptor(8, i, 16));
        CHECK(a != procedural_descriptor(7, i + 1, 16));
    }
}

TEST_CASE("synthetic provider at stride 1 equals the feature render plus noise") {
    const Scene s = descriptor_scene(1, 30, 8);
    const Pose pose = Pose::identity();
    const Image expected = render(s, pose, kCam, Channels::features).features;

    const SyntheticProvider exact(s, kCam, {.noise_sigma = 0.0, .grid_stride = 1});
    const FeatureMap m = exact.dense_features(query_at(pose));
    CHECK(m.map == expected);
    CHECK(m.grid_stride == 1);

    const double sigma = 0.05;
    const SyntheticProvider noisy(s, kCam, {.noise_sigma = sigma, .grid_stride = 1, .seed = 3});
    const Image n = noisy.dense_features(query_at(pose)).map;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n.data().size(); ++i) {
        const double d = n.data()[i] - expected.data()[i];
        sum += d;
        sq += d * d;
    }
    const double count = static_cast<double>(n.data().size());
    CHECK(std::abs(sum / count) < 4.0 * sigma / std::sqrt(count));
    CHECK(std::sqrt(sq / count) == doctest::Approx(sigma).epsilon(0.05));
}

TEST_CASE("synthetic provider samples a coarse grid and upsamples") {
    const Scene s = descriptor_scene(2, 30, 4);
    const SyntheticProvider p(s, kCam, {.noise_sigma = 0.0, .grid_stride = 8});
    const Image full = render(s, Pose::identity(), kCam, Channels::features).features;
    const FeatureMap m = p.dense_features(query_at(Pose::identity()));
    CHECK(m.grid_stride == 8);
    CHECK(m.map.width() == kCam.width);
    for (int r = 0; r < kCam.height; r += 8) {
        for (int c = 0; c < kCam.width; c += 8) {
            for (int ch = 0; ch < 4; ++ch) CHECK(m.map.at(r, c, ch) == doctest::Approx(full.at(r, c, ch)));
        }
    }
    // Midway between two nodes on a row is their average.
    for (int ch = 0; ch < 4; ++ch) {
        CHECK(m.map.at(8, 12, ch) == doctest::Approx(0.5 * (full.at(8, 8, ch) + full.at(8, 16, ch))));
    }
}

TEST_CASE("synthetic provider is deterministic under a seed") {
    const Scene s = descriptor_scene(3, 20, 4);
    const SyntheticProvider a(s, kCam, {.noise_sigma = 0.0, .seed = 9});
    const SyntheticProvider b(s, kCam, {.noise_sigma = 0.0, .seed = 9});
    CHECK(a.dense_features(query_at(Pose::identity())).map == b.dense_features(query_at(Pose::identity())).map);
    const SyntheticProvider c(s, kCam, {.noise_sigma = 0.1, .seed = 9});
    const SyntheticProvider d(s, kCam, {.noise_sigma = 0.1, .seed = 9});
    CHECK(c.dense_features(query_at(Pose::identity())).map == d.dense_features(query_at(Pose::identity())).map);
}

TEST_CASE("synthetic provider input errors") {
    const Scene s = descriptor_scene(4, 5, 4);
    const SyntheticProvider p(s, kCam);
    QueryImage wrong_size{"q", Image(10, 10, 3), Pose::identity()};
    CHECK_THROWS_AS(p.dense_features(wrong_size), InvalidInput);
    QueryImage no_pose{"q", Image(kCam.width, kCam.height, 3), std::nullopt};
    CHECK_THROWS_AS(p.dense_features(no_pose), InvalidInput);
    CHECK_THROWS_AS(p.sparse_keypoints(query_at(Pose::identity()), 0), InvalidInput);
}

TEST_CASE("sparse keypoints are a prefix of the fully sorted reliability list") {
    const Scene s = descriptor_scene(5, 40, 8);
    const SyntheticProvider p(s, kCam, {.noise_sigma = 0.01, .seed = 1});
    const QueryImage q = query_at(Pose::identity());
    const FeatureMap dense = p.dense_features(q);
    const Image rel = gradient_reliability(dense.map);

    // Oracle: sort every pixel by (reliability desc, row-major index asc).
    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < static_cast<int>(rel.pixel_count()); ++i) all.emplace_back(-rel.data()[i], i);
    std::sort(all.begin(), all.end());

    for (std::size_t k : {std::size_t{1}, std::size_t{17}, std::size_t{1000}}) {
        const KeypointSet kp = p.sparse_keypoints(q, k);
        REQUIRE(kp.size() == k);
        CHECK_FALSE(kp.truncated);
        CHECK(kp.dim() == 8);
        for (std::size_t i = 0; i < k; ++i) {
            const int idx = all[i].second;
            CHECK(kp.pixels[i] == Vec2(idx % kCam.width, idx / kCam.width));
            CHECK(kp.reliability[i] == -all[i].first);
            if (i > 0) CHECK(kp.reliability[i] <= kp.reliability[i - 1]);
        }
        const auto& d = kp.descriptors.back();
        const Vec2& px = kp.pixels.back();
        for (int ch = 0; ch < 8; ++ch) CHECK(d[ch] == dense.map.at(int(px.y()), int(px.x()), ch));
    }
    CHECK(p.sparse_keypoints(q, 1).reliability[0] == 1.0);
}

TEST_CASE("requesting more keypoints than pixels returns everything, flagged") {
    const Scene s = descriptor_scene(6, 10, 2);
    const SyntheticProvider p(s, kCam, {.noise_sigma = 0.0});
    const KeypointSet kp = p.sparse_keypoints(query_at(Pose::identity()), 100000);
    CHECK(kp.truncated);
    CHECK(kp.size() == static_cast<std::size_t>(kCam.width * kCam.height));
}

TEST_CASE("zero-noise descriptors at a dominant splat's projection match its stored descriptor") {
    // Well separated opaque splats so that each dominates its own footprint.
    Scene s;
    s.feature_dim = 16;
    for (int i = 0; i < 6; ++i) {
        Gaussian g;
        g.position = Vec3(-0.5 + 0.2 * i, 0.05 * (i % 2), 2.0);
        g.scale = Vec3::Constant(0.03);
        g.opacity = 0.99;
        g.color = Vec3::Constant(0.5);
        g.feature = procedural_descriptor(11, static_cast<std::size_t>(i), 16);
        s.gaussians.push_back(g);
    }
    const SyntheticProvider p(s, kCam, {.noise_sigma = 0.0, .grid_stride = 1});
    const FeatureMap m = p.dense_features(query_at(Pose::identity()));
    for (const Gaussian& g : s.gaussians) {
        const auto proj = project(g.position, Pose::identity(), kCam);
        const int c = static_cast<int>(std::lround(proj.pixel.x())), r = static_cast<int>(std::lround(proj.pixel.y()));
        if (c < 0 || r < 0 || c >= kCam.width || r >= kCam.height) continue;
        const auto px = m.map.pixel(r, c);
        const Eigen::Map<const Eigen::VectorXd> d(px.data(), 16);
        CHECK(d.dot(g.feature) / (d.norm() * g.feature.norm()) >= 0.999);
    }
}

TEST_CASE("file provider round trip") {
    const auto dir = temp_dir("splatloc_fileprovider");
    const Scene s = descriptor_scene(7, 20, 6);
    const SyntheticProvider synth(s, kCam, {.noise_sigma = 0.01, .seed = 2});
    const QueryImage q = query_at(Pose::identity(), "frame_000");
    const FeatureMap m = synth.dense_features(q);
    io::write_raster(dir / "frame_000.fmap", m.map);

    const FileProvider files(dir, 6);
    const Image back = files.dense_features({"frame_000", Image(), std::nullopt}).map;
    REQUIRE(back.same_shape(m.map));
    for (std::size_t i = 0; i < back.data().size(); ++i) {
        CHECK(back.data()[i] == static_cast<double>(static_cast<float>(m.map.data()[i])));
    }
    CHECK_THROWS_AS(FileProvider(dir, 5).dense_features({"frame_000", Image(), std::nullopt}), InvalidInput);

    // Without a keypoint file keypoints come from the dense map.
    CHECK(files.sparse_keypoints({"frame_000", Image(), std::nullopt}, 10).size() == 10);

    const KeypointSet kp = synth.sparse_keypoints(q, 50);
    write_keypoints(files.keypoint_path("frame_000"), kp);
    const KeypointSet read = files.sparse_keypoints({"frame_000", Image(), std::nullopt}, 50);
    REQUIRE(read.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(read.pixels[i] == kp.pixels[i]);
        CHECK(read.reliability[i] == kp.reliability[i]);
        CHECK(read.descriptors[i] == kp.descriptors[i]);
    }
    CHECK(files.sparse_keypoints({"frame_000", Image(), std::nullopt}, 80).truncated);
    std::filesystem::remove_all(dir);
}

TEST_CASE("keypoint file parse errors cite the line") {
    const auto dir = temp_dir("splatloc_kp_parse");
    {
        std::ofstream out(dir / "bad.kp");
        out << "# header\n1 2 0.5 0.1 0.2\n3 4 0.4 0.1\n";
    }
    try {
        read_keypoints(dir / "bad.kp");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    {
        std::ofstream out(dir / "bad2.kp");
        out << "1 2\n";
    }
    CHECK_THROWS_AS(read_keypoints(dir / "bad2.kp"), ParseError);
    std::filesystem::remove_all(dir);
}
