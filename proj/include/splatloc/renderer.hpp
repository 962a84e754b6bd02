#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splatloc/geometry.hpp"
#include "splatloc/image.hpp"
#include "splatloc/scene.hpp"

namespace splatloc {

inline constexpr double kCovarianceFloor = 0.3;    // px^2 added to the image covariance diagonal
inline constexpr double kSigmaCutoff = 3.0;        // footprint truncation, Mahalanobis
inline constexpr double kMinSplatAlpha = 1.0 / 255.0;
inline constexpr double kDepthAlphaMin = 0.5;      // depth is valid where accumulated alpha >= this
inline constexpr double kDepthSentinel = 0.0;
inline constexpr double kNearPlane = 1e-2;

struct ProjectedGaussian {
    Vec2 center;
    Mat2 covariance;  // includes the diagonal floor
    double depth;
};

/// Image-space footprint of a Gaussian. Returns nullopt when the center is
/// closer than the near plane (the splat is culled).
std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const Pose& pose,
                                                  const CameraIntrinsics& k,
                                                  double covariance_floor = kCovarianceFloor);

enum class Channels : unsigned { rgb = 1, features = 2, depth = 4, all = 7 };

constexpr Channels operator|(Channels a, Channels b) {
    return static_cast<Channels>(static_cast<unsigned>(a) | static_cast<unsigned>(b));
}
constexpr bool has(Channels set, Channels c) {
    return (static_cast<unsigned>(set) & static_cast<unsigned>(c)) != 0;
}

/// Images are empty for channels that were not requested; alpha is always filled.
struct RenderOutput {
    Image rgb;       // H x W x 3
    Image features;  // H x W x V
    Image depth;     // H x W x 1, kDepthSentinel where alpha < kDepthAlphaMin
    Image alpha;     // H x W x 1
};

RenderOutput render(const Scene& scene, const Pose& pose, const CameraIntrinsics& k,
                    Channels channels = Channels::all);

struct Contribution {
    std::uint32_t gaussian;  // index into Scene::gaussians
    double weight;           // alpha_hat * T
};

/// Front-to-back blending weights at integer pixel (col, row).
std::vector<Contribution> compositing_weights(const Scene& scene, const Pose& pose,
                                              const CameraIntrinsics& k, int col, int row);

/// Per-pixel record of every splat that contributed, in blending order.
struct RenderTrace {
    struct Entry {
        std::uint32_t gaussian;
        double falloff;        // exp(-0.5 d^T S^-1 d), so alpha_hat = opacity * falloff
        double alpha_hat;
        double transmittance;  // T before this splat
    };

    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> offsets;  // pixel p owns entries[offsets[p], offsets[p+1])
    std::vector<Entry> entries;

    std::span<const Entry> at(int row, int col) const {
        const std::size_t p = static_cast<std::size_t>(row) * width + col;
        return {entries.data() + offsets[p], entries.data() + offsets[p + 1]};
    }
};

/// Same as render() and additionally records the blending trace.
RenderOutput render_traced(const Scene& scene, const Pose& pose, const CameraIntrinsics& k,
                           Channels channels, RenderTrace& trace);

}  // namespace splatloc
