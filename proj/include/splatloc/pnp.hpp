#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splatloc/geometry.hpp"

namespace splatloc {

/// A 2D observation of a known world point.
struct PointMatch {
    Vec2 pixel;
    Vec3 world;
};

/// Up to four poses taking the three world points onto the three unit bearing vectors.
std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& bearings, const std::array<Vec3, 3>& world);

/// Pose from >= 4 matches: minimal solutions on a few spread-out samples, then a
/// Levenberg-Marquardt polish of the reprojection error over all matches.
/// Throws InsufficientData below 4 matches, SolverFailure on degenerate input or
/// when a match ends up behind the camera.
Pose solve_pnp(std::span<const PointMatch> matches, const CameraIntrinsics& k);

/// Levenberg-Marquardt on the reprojection error from an initial pose.
Pose refine_pnp(std::span<const PointMatch> matches, const CameraIntrinsics& k, const Pose& initial,
                int max_iterations = 100);

/// Euclidean reprojection error in pixels; +inf when the point is not in front of the camera.
double reprojection_error(const PointMatch& m, const Pose& pose, const CameraIntrinsics& k);

double reprojection_rms(std::span<const PointMatch> matches, const Pose& pose, const CameraIntrinsics& k);

inline constexpr int kDefaultRansacIterations = 20000;

struct RansacConfig {
    int iterations = kDefaultRansacIterations;
    double threshold = 3.0;  // inlier reprojection error, pixels
    int sample_size = 4;     // 3 points for the minimal solver plus 1 to disambiguate
    std::uint64_t seed = 0;
    double early_exit_ratio = 0.9;

    void validate() const;
};

struct RansacResult {
    Pose pose;
    std::vector<bool> inliers;
    std::size_t inlier_count = 0;
    std::size_t hypothesis_inliers = 0;  // count of the best sampled hypothesis before refitting
    int iterations_run = 0;
};

/// Throws InsufficientData below the sample size and SolverFailure when no hypothesis
/// reaches sample_size inliers.
RansacResult ransac_pnp(std::span<const PointMatch> matches, const CameraIntrinsics& k, const RansacConfig& config);

}  // namespace splatloc
