#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "splatloc/descriptors.hpp"
#include "splatloc/geometry.hpp"
#include "splatloc/scene.hpp"

namespace splatloc {

// ---- synthetic worlds ----

/// Layout of the procedural desk: a square tabletop with a few boxes on it, covered by
/// flattened Gaussians, viewed by cameras on a jittered orbit.
struct WorldConfig {
    int width = 160;
    int height = 120;
    double focal = 1.8;          // fx = fy = focal * width
    double table_size = 1.0;     // meters
    int boxes = 3;
    double min_radius = 1.2;     // camera distance from the table center
    double max_radius = 1.5;
    double min_elevation_deg = 30.0;
    double max_elevation_deg = 50.0;
    double min_coverage = 0.5;   // required mean accumulated alpha per view
    int max_retries = 50;        // per camera
};

struct SyntheticWorld {
    Scene scene;
    std::vector<Pose> poses;
    CameraIntrinsics k;
    std::uint64_t seed = 0;

    friend bool operator==(const SyntheticWorld&, const SyntheticWorld&) = default;
};

SyntheticWorld generate_world(std::uint64_t seed, int n_gaussians, int n_views, int feature_dim,
                              const WorldConfig& config = {});

/// Further cameras from the same orbit distribution (e.g. held-out queries). Throws
/// InvalidInput when a camera fails the coverage check after the allowed retries.
std::vector<Pose> sample_cameras(const Scene& scene, const CameraIntrinsics& k, std::uint64_t seed, int n,
                                 const WorldConfig& config = {});

double mean_coverage(const Scene& scene, const Pose& pose, const CameraIntrinsics& k);

/// Largest distance between two Gaussian centers.
double scene_diameter(const Scene& scene);

/// Geometry kept, appearance reset for distillation: opacity 0.5, gray color, zero features.
Scene reset_attributes(const Scene& scene);

// ---- evaluation ----

struct ThresholdBucket {
    double cm;
    double deg;
    double percent;
};

struct EvalReport {
    std::vector<double> translation_cm;
    std::vector<double> rotation_deg;
    double median_translation_cm = 0.0;
    double median_rotation_deg = 0.0;
    std::vector<ThresholdBucket> buckets;  // 10cm/5deg, 5cm/5deg, 2cm/2deg, 1cm/1deg
};

/// Lower median for even counts.
double lower_median(std::vector<double> values);

/// Positions are taken to be in meters. Throws InvalidInput on length mismatch or empty input.
EvalReport evaluate(std::span<const Pose> estimates, std::span<const Pose> ground_truth);

void write_report(std::ostream& out, const EvalReport& report, std::span<const std::string> names = {});

// ---- files ----

struct NamedPose {
    std::string name;
    Pose pose;
};

/// One `name qw qx qy qz tx ty tz` line per pose, world-to-camera.
void write_poses(const std::filesystem::path& path, std::span<const NamedPose> poses);
std::vector<NamedPose> read_poses(const std::filesystem::path& path);

/// `fx fy cx cy width height` on one line.
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

// ---- COLMAP text models ----

struct ColmapPoint {
    std::uint64_t id;
    Vec3 position;
    Vec3 color;  // [0,1]
};

struct ColmapImage {
    std::uint32_t id;
    std::string name;
    std::uint32_t camera_id;
    Pose pose;
};

struct ColmapModel {
    std::map<std::uint32_t, CameraIntrinsics> cameras;
    std::vector<ColmapImage> images;
    std::vector<ColmapPoint> points;
    /// Points as Gaussians: isotropic scale from the nearest-neighbour distance, opacity 0.5,
    /// zero features of dimension `feature_dim`.
    Scene scene;
};

/// Reads cameras.txt, images.txt and points3D.txt. Only PINHOLE and SIMPLE_PINHOLE cameras
/// are supported; principal points are shifted by -0.5 to the pixel-center origin.
ColmapModel load_colmap(const std::filesystem::path& dir, int feature_dim = kDefaultFeatureDim);

}  // namespace splatloc
