#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "splatloc/geometry.hpp"

namespace splatloc {

/// One splat. `scale` holds per-axis standard deviations in meters.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Quaternion rotation;
    Vec3 scale = Vec3::Ones();
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
    Eigen::VectorXd feature;

    friend bool operator==(const Gaussian& a, const Gaussian& b) {
        return a.position == b.position && a.rotation == b.rotation && a.scale == b.scale &&
               a.opacity == b.opacity && a.color == b.color && a.feature.size() == b.feature.size() &&
               a.feature == b.feature;
    }
};

struct Scene {
    std::vector<Gaussian> gaussians;
    int feature_dim = 0;
    Vec3 background = Vec3::Zero();

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    /// Throws InvalidInput when a Gaussian breaks the scene invariants.
    void validate() const;

    /// Clamps opacity and color into [0,1].
    void clamp_attributes();

    friend bool operator==(const Scene&, const Scene&) = default;
};

// Scene file layout, little-endian:
//   bytes 0-3   magic "SPLS"
//   uint32      version (1)
//   uint32      gaussian count N
//   uint32      feature dimension V
//   float32[3]  background color
//   N records of (14 + V) float32: position xyz, rotation wxyz, scale xyz,
//   opacity, color rgb, then V feature values.
inline constexpr char kSceneMagic[4] = {'S', 'P', 'L', 'S'};
inline constexpr std::uint32_t kSceneVersion = 1;

void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(const std::filesystem::path& path);

}  // namespace splatloc
