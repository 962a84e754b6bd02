#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splatloc/coarse_pose.hpp"
#include "splatloc/descriptors.hpp"
#include "splatloc/geometry.hpp"
#include "splatloc/image.hpp"
#include "splatloc/scene.hpp"

namespace splatloc {

struct RefineConfig {
    double learning_rate = 1e-3;
    int iterations = 250;          // 350 suits larger outdoor scenes
    int feature_rounds = 5;
    double tolerance = 0.0;        // stop once the loss changes by less than this; 0 runs every iteration
    int sample_stride = 0;         // 0 picks 1 up to 640x480 and 2 above
    double divergence_factor = 10.0;
    int divergence_patience = 10;  // consecutive iterations above the factor before stopping
    std::size_t feature_keypoints = kDefaultKeypointCount;
    RansacConfig feature_ransac{.iterations = 1000};

    void validate() const;
};

/// Bilinear interpolation at a continuous pixel (x = column, y = row). Returns nullopt
/// outside [0, W-1] x [0, H-1].
std::optional<Eigen::VectorXd> bilinear_sample(const Image& image, const Vec2& pixel);

struct WarpSample {
    Vec2 source;
    Vec2 warped;
    bool valid = false;
};

/// Lifts `pixel` with rendered depth through the render pose into the world and projects it
/// with the optimized pose. Invalid for sentinel/non-positive depth or when the point lands
/// behind the optimized camera; bounds are not checked here.
WarpSample warp(const Vec2& pixel, const Pose& render_pose, const Pose& opt_pose, double depth,
                const CameraIntrinsics& k);

/// Raw pose parameters (qw, qx, qy, qz, tx, ty, tz). The quaternion need not be unit.
using PoseParams = Eigen::Matrix<double, 7, 1>;
PoseParams to_params(const Pose& p);
Pose from_params(const PoseParams& p);

/// The photometric warp objective for one reference render. The rendered image and depth
/// are fixed at construction; the loss is the mean over valid samples of
/// || query(W(p)) - rendered(p) ||_2.
class WarpProblem {
public:
    WarpProblem(Image query, Image rendered, const Image& depth, const Pose& render_pose, const CameraIntrinsics& k,
                int sample_stride = 1);

    /// Throws NoOverlap when no sample is valid.
    double loss(const Pose& opt_pose) const;

    /// Loss and gradient with respect to the raw parameters. The quaternion is normalized
    /// internally, so the gradient is orthogonal to it. `active`, when given, restricts the
    /// sum to the flagged samples (indexing `samples()`).
    double loss_and_gradient(const PoseParams& params, PoseParams* gradient,
                             const std::vector<bool>* active = nullptr) const;

    /// Per-sample warps at `opt_pose` (valid additionally requires landing in bounds).
    std::vector<WarpSample> warp_samples(const Pose& opt_pose) const;

    std::size_t sample_count() const { return pixels_.size(); }
    const Pose& render_pose() const { return render_pose_; }

    /// query(W(p)) written at p wherever the sample is valid, zero elsewhere.
    Image overlay(const Pose& opt_pose) const;

private:
    Image query_;
    Image rendered_;
    Pose render_pose_;
    CameraIntrinsics k_;
    std::vector<Vec2> pixels_;  // only pixels with valid depth
    std::vector<Vec3> world_;
};

double warp_loss(const Image& query, const Image& rendered, const Image& depth, const Pose& render_pose,
                 const Pose& opt_pose, const CameraIntrinsics& k);

struct WarpResult {
    Pose pose;
    std::vector<double> trace;  // loss before each step, plus the final iterate
    std::vector<Pose> path;     // the iterate each trace entry was evaluated at
    int best_iteration = 0;
    double initial_loss = 0.0;
    double best_loss = 0.0;
    bool diverged = false;   // stopped early by the divergence guard
    std::string diagnostic;
};

/// Renders once at the coarse pose and runs Adam on the pose. Returns the lowest-loss
/// iterate. Throws NoOverlap when the coarse render has no usable sample. A loss held above
/// divergence_factor times its initial value stops the run with `diverged` set.
WarpResult refine_warp(const Image& query, const Scene& scene, const Pose& coarse_pose, const CameraIntrinsics& k,
                       const RefineConfig& config);

struct FeatureRefineResult {
    Pose pose;
    int rounds_run = 0;
    bool insufficient = false;  // a round had too few matches; pose is the last good one
    std::vector<std::size_t> inliers_per_round;
};

/// Iterated render -> dense match -> back-project -> PnP.
FeatureRefineResult refine_feature(const QueryImage& query, const Scene& scene, const Pose& pose,
                                   const CameraIntrinsics& k, const DescriptorProvider& provider,
                                   const RefineConfig& config);

enum class Variant { coarse, base, fine };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

struct LocalizeConfig {
    CoarseConfig coarse;
    RefineConfig refine;
};

struct LocalizeReport {
    Pose pose;
    Pose coarse_pose;
    Variant variant = Variant::coarse;
    std::size_t coarse_inliers = 0;
    std::size_t correspondences = 0;
    std::optional<FeatureRefineResult> feature;
    std::optional<WarpResult> warp;
    std::vector<std::string> notes;  // recoverable problems in later stages
};

/// coarse = localize_coarse; base adds refine_warp; fine runs refine_feature then refine_warp.
/// Failures after the coarse stage keep the previous estimate and are recorded in `notes`.
LocalizeReport localize(const QueryImage& query, const Scene& scene, const CameraIntrinsics& k,
                        const DescriptorProvider& provider, const LocalizeConfig& config, Variant variant);

/// `iteration,loss` CSV.
void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace);

/// `iteration,loss,qw,qx,qy,qz,tx,ty,tz` CSV of a warp run, one row per iterate.
void write_warp_trace(const std::filesystem::path& path, const WarpResult& result);
WarpResult read_warp_trace(const std::filesystem::path& path);

}  // namespace splatloc
