#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "splatloc/geometry.hpp"
#include "splatloc/image.hpp"
#include "splatloc/scene.hpp"

namespace splatloc {

inline constexpr std::size_t kDefaultKeypointCount = 1000;
inline constexpr int kDefaultFeatureDim = 64;

struct KeypointSet {
    std::vector<Vec2> pixels;
    std::vector<Eigen::VectorXd> descriptors;
    std::vector<double> reliability;
    /// Set when fewer keypoints than requested were available.
    bool truncated = false;

    std::size_t size() const { return pixels.size(); }
    int dim() const { return descriptors.empty() ? 0 : static_cast<int>(descriptors.front().size()); }
    /// Throws InvalidInput if the lists disagree in length or dimension.
    void validate() const;
};

/// Dense per-pixel descriptors at image resolution.
struct FeatureMap {
    Image map;            // H x W x V
    int grid_stride = 1;  // stride of the native grid the map was upsampled from
};

/// An image handed to a descriptor provider. `name` keys file lookups; `oracle_pose`
/// is only consulted by the synthetic provider.
struct QueryImage {
    std::string name;
    Image rgb;
    std::optional<Pose> oracle_pose;
};

/// Stand-in for a learned keypoint/descriptor network.
class DescriptorProvider {
public:
    virtual ~DescriptorProvider() = default;

    virtual int dim() const = 0;
    virtual FeatureMap dense_features(const QueryImage& image) const = 0;

    /// The k most reliable pixels in descending reliability, ties by row-major order.
    /// Requests beyond the pixel count return everything with `truncated` set.
    virtual KeypointSet sparse_keypoints(const QueryImage& image, std::size_t k) const;

protected:
    /// Per-pixel reliability in [0,1] for a dense map (H x W x 1).
    virtual Image reliability(const FeatureMap& features) const;
};

/// Reliability as the central-difference gradient magnitude of the map, normalized by its maximum.
Image gradient_reliability(const Image& features);
/// Reliability as the descriptor norm, normalized by its maximum.
Image norm_reliability(const Image& features);

/// Top-k selection over a reliability map, shared by the providers.
KeypointSet select_keypoints(const Image& features, const Image& reliability, std::size_t k);

/// Deterministic pseudo-random unit descriptor for scene element `index`.
Eigen::VectorXd procedural_descriptor(std::uint64_t seed, std::size_t index, int dim);

/// Bilinear resampling of a coarse grid (node (i,j) at pixel (i*stride, j*stride)) to width x height.
Image upsample_bilinear(const Image& grid, int stride, int width, int height);

enum class ReliabilityMode { gradient, norm };

struct SyntheticProviderConfig {
    double noise_sigma = 0.01;
    int grid_stride = 8;
    std::uint64_t seed = 0;
    ReliabilityMode reliability = ReliabilityMode::gradient;
};

/// Teacher maps produced by rendering a reference scene's feature channels at the
/// query's oracle pose, sampled on a coarse grid with Gaussian noise and upsampled.
class SyntheticProvider final : public DescriptorProvider {
public:
    SyntheticProvider(Scene reference, CameraIntrinsics k, SyntheticProviderConfig config = {});

    int dim() const override { return reference_.feature_dim; }
    FeatureMap dense_features(const QueryImage& image) const override;

    const SyntheticProviderConfig& config() const { return config_; }

protected:
    Image reliability(const FeatureMap& features) const override;

private:
    Scene reference_;
    CameraIntrinsics k_;
    SyntheticProviderConfig config_;
};

/// Reads `<dir>/<name>.fmap` dense maps and, when present, `<dir>/<name>.kp` keypoint files.
class FileProvider final : public DescriptorProvider {
public:
    FileProvider(std::filesystem::path dir, int dim);

    int dim() const override { return dim_; }
    FeatureMap dense_features(const QueryImage& image) const override;
    KeypointSet sparse_keypoints(const QueryImage& image, std::size_t k) const override;

    std::filesystem::path dense_path(const std::string& name) const { return dir_ / (name + ".fmap"); }
    std::filesystem::path keypoint_path(const std::string& name) const { return dir_ / (name + ".kp"); }

private:
    std::filesystem::path dir_;
    int dim_;
};

/// One keypoint per line: `u v reliability d_1 ... d_V`. Lines starting with '#' are comments.
void write_keypoints(const std::filesystem::path& path, const KeypointSet& keypoints);
KeypointSet read_keypoints(const std::filesystem::path& path);

}  // namespace splatloc
