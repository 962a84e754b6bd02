#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "splatloc/geometry.hpp"
#include "splatloc/image.hpp"
#include "splatloc/scene.hpp"
#include "splatloc/ssim.hpp"

namespace splatloc {

inline constexpr int kDefaultTrainIterations = 15000;

struct TrainConfig {
    int iterations = kDefaultTrainIterations;
    double lambda = 0.2;  // SSIM weight in the color loss
    double lr_color = 2.5e-3;
    double lr_opacity = 5e-2;  // applied to the opacity logit
    double lr_feature = 2.5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
    std::uint64_t seed = 0;

    void validate() const;
};

/// A posed training image with its teacher descriptor map.
struct TrainView {
    Image image;    // H x W x 3
    Image teacher;  // H x W x V
    Pose pose;
    CameraIntrinsics k;
};

/// (1 - lambda) * mean|I - I_hat| + lambda * (1 - SSIM) / 2.
double loss_color(const Image& target, const Image& rendered, double lambda, const SsimParams& ssim_params = {});

/// mean|F_t - F_r| over all H * W * V entries.
double loss_features(const Image& teacher, const Image& rendered);

struct LossTerms {
    double color = 0.0;
    double features = 0.0;
    double total() const { return color + features; }
};

/// Gradients of the per-view loss with respect to each Gaussian's color, opacity and feature.
struct AttributeGradients {
    std::vector<Vec3> color;
    std::vector<double> opacity;
    std::vector<Eigen::VectorXd> feature;
};

/// Loss of `scene` against one view; fills exact gradients when `grads` is non-null.
LossTerms view_loss(const Scene& scene, const TrainView& view, double lambda, AttributeGradients* grads);

struct LossRecord {
    int iteration;
    LossTerms loss;
};

struct TrainResult {
    Scene scene;
    std::vector<LossRecord> history;  // loss of the sampled view before each update
};

/// Optimizes color, opacity and features with geometry frozen. Throws InvalidInput without views.
TrainResult train(Scene scene, std::span<const TrainView> views, const TrainConfig& config);

/// CSV with header `iteration,L_color,L_features,L_GS`.
void write_loss_history(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace splatloc
