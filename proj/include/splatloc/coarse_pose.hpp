#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "splatloc/descriptors.hpp"
#include "splatloc/pnp.hpp"
#include "splatloc/scene.hpp"

namespace splatloc {

/// Query pixel matched to a scene Gaussian.
struct Correspondence {
    Vec2 pixel;
    std::uint32_t point_index;
    double similarity;  // cosine, in [-1, 1]
};

struct MatchOptions {
    bool mutual = false;  // keep only mutual nearest neighbours
};

/// For every query keypoint, the Gaussian with the highest cosine similarity (lowest
/// index on ties). Zero-norm descriptors on either side never match.
std::vector<Correspondence> match(const KeypointSet& query, const Scene& scene, const MatchOptions& options = {});

std::vector<PointMatch> to_point_matches(std::span<const Correspondence> c, const Scene& scene);

struct CoarseConfig {
    std::size_t keypoints = kDefaultKeypointCount;
    MatchOptions matching;
    RansacConfig ransac;
};

struct CoarseResult {
    Pose pose;
    std::vector<Correspondence> correspondences;
    RansacResult ransac;
};

/// sparse_keypoints -> match -> ransac_pnp.
CoarseResult localize_coarse(const QueryImage& query, const Scene& scene, const CameraIntrinsics& k,
                             const DescriptorProvider& provider, const CoarseConfig& config);

/// Text dump, one `u v point_index similarity` per line.
void write_correspondences(const std::filesystem::path& path, std::span<const Correspondence> c);

}  // namespace splatloc
