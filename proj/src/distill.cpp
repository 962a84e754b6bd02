#include "splatloc/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>

#include "splatloc/adam.hpp"
#include "splatloc/errors.hpp"
#include "splatloc/renderer.hpp"

namespace splatloc {

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

double mean_abs_diff(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return a.data().empty() ? 0.0 : s / static_cast<double>(a.data().size());
}

double logit(double p) {
    const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::log(q / (1.0 - q));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_view(const Scene& scene, const TrainView& view) {
    view.k.validate();
    if (view.image.width() != view.k.width || view.image.height() != view.k.height || view.image.channels() != 3) {
        throw ShapeMismatch("training image does not match the camera size or is not RGB");
    }
    if (view.teacher.width() != view.image.width() || view.teacher.height() != view.image.height()) {
        throw ShapeMismatch("teacher map and training image differ in size");
    }
    if (view.teacher.channels() != scene.feature_dim) {
        throw ShapeMismatch("teacher map has " + std::to_string(view.teacher.channels()) +
                            " channels, scene has " + std::to_string(scene.feature_dim));
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (iterations < 0) throw InvalidInput("iterations must be non-negative");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("lambda must lie in [0,1]");
    if (lr_color < 0.0 || lr_opacity < 0.0 || lr_feature < 0.0) throw InvalidInput("learning rates must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidInput("betas must lie in [0,1)");
}

double loss_color(const Image& target, const Image& rendered, double lambda, const SsimParams& ssim_params) {
    require_same_shape(target, rendered, "loss_color");
    const double l1 = mean_abs_diff(target, rendered);
    if (lambda == 0.0) return l1;
    return (1.0 - lambda) * l1 + lambda * 0.5 * (1.0 - ssim(target, rendered, ssim_params));
}

double loss_features(const Image& teacher, const Image& rendered) {
    require_same_shape(teacher, rendered, "loss_features");
    return mean_abs_diff(teacher, rendered);
}

LossTerms view_loss(const Scene& scene, const TrainView& view, double lambda, AttributeGradients* grads) {
    check_view(scene, view);
    const int v = scene.feature_dim;
    RenderTrace trace;
    const Channels ch = Channels::rgb | Channels::features;
    const RenderOutput out = render_traced(scene, view.pose, view.k, ch, trace);

    Image ssim_grad;
    double ssim_value = 1.0;
    if (lambda > 0.0) ssim_value = ssim_with_gradient(view.image, out.rgb, grads ? &ssim_grad : nullptr);

    LossTerms loss;
    loss.color = (1.0 - lambda) * mean_abs_diff(view.image, out.rgb) + lambda * 0.5 * (1.0 - ssim_value);
    loss.features = mean_abs_diff(view.teacher, out.features);
    if (!grads) return loss;

    const std::size_t n = scene.size();
    grads->color.assign(n, Vec3::Zero());
    grads->opacity.assign(n, 0.0);
    grads->feature.assign(n, Eigen::VectorXd::Zero(v));

    const double rgb_scale = (1.0 - lambda) / static_cast<double>(out.rgb.data().size());
    const double feat_scale = v > 0 ? 1.0 / static_cast<double>(out.features.data().size()) : 0.0;
    Eigen::VectorXd d_feat(v), rest_feat(v);
    for (int r = 0; r < view.k.height; ++r) {
        for (int c = 0; c < view.k.width; ++c) {
            const auto entries = trace.at(r, c);
            if (entries.empty()) continue;
            Vec3 d_rgb;
            for (int k = 0; k < 3; ++k) {
                d_rgb[k] = rgb_scale * sign(out.rgb.at(r, c, k) - view.image.at(r, c, k));
                if (lambda > 0.0) d_rgb[k] -= 0.5 * lambda * ssim_grad.at(r, c, k);
            }
            for (int k = 0; k < v; ++k) {
                d_feat[k] = feat_scale * sign(out.features.at(r, c, k) - view.teacher.at(r, c, k));
            }
            // Back to front; rest_* accumulate what lies behind the current splat.
            Vec3 rest_rgb = Vec3::Zero();
            rest_feat.setZero();
            for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
                const Gaussian& g = scene.gaussians[it->gaussian];
                const double w = it->alpha_hat * it->transmittance;
                const Vec3 x = g.color - scene.background;
                grads->color[it->gaussian] += w * d_rgb;
                double d_alpha_hat = it->transmittance * d_rgb.dot(x - rest_rgb);
                if (v > 0) {
                    grads->feature[it->gaussian] += w * d_feat;
                    d_alpha_hat += it->transmittance * d_feat.dot(g.feature - rest_feat);
                    rest_feat = it->alpha_hat * g.feature + (1.0 - it->alpha_hat) * rest_feat;
                }
                grads->opacity[it->gaussian] += d_alpha_hat * it->falloff;
                rest_rgb = it->alpha_hat * x + (1.0 - it->alpha_hat) * rest_rgb;
            }
        }
    }
    return loss;
}

TrainResult train(Scene scene, std::span<const TrainView> views, const TrainConfig& config) {
    config.validate();
    scene.validate();
    if (views.empty()) throw InvalidInput("training needs at least one view");
    for (const TrainView& v : views) check_view(scene, v);

    const std::size_t n = scene.size();
    const int v = scene.feature_dim;
    const Eigen::Index stride = 4 + v;  // color(3), opacity logit(1), feature(V)
    Eigen::VectorXd params(static_cast<Eigen::Index>(n) * stride);
    Eigen::VectorXd lrs(params.size());
    for (std::size_t i = 0; i < n; ++i) {
        const Gaussian& g = scene.gaussians[i];
        const Eigen::Index o = static_cast<Eigen::Index>(i) * stride;
        params.segment<3>(o) = g.color;
        params[o + 3] = logit(g.opacity);
        params.segment(o + 4, v) = g.feature;
        lrs.segment<3>(o).setConstant(config.lr_color);
        lrs[o + 3] = config.lr_opacity;
        lrs.segment(o + 4, v).setConstant(config.lr_feature);
    }
    const Eigen::VectorXd initial = params;
    const Scene original = scene;
    Adam adam(lrs, config.beta1, config.beta2, config.epsilon);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);

    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(config.iterations));
    AttributeGradients grads;
    Eigen::VectorXd flat(params.size());
    for (int it = 0; it < config.iterations; ++it) {
        const TrainView& view = views[pick(rng)];
        const LossTerms loss = view_loss(scene, view, config.lambda, &grads);
        result.history.push_back({it, loss});
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::Index o = static_cast<Eigen::Index>(i) * stride;
            const double a = scene.gaussians[i].opacity;
            flat.segment<3>(o) = grads.color[i];
            flat[o + 3] = grads.opacity[i] * a * (1.0 - a);
            flat.segment(o + 4, v) = grads.feature[i];
        }
        adam.step(params, flat);
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian& g = scene.gaussians[i];
            const Eigen::Index o = static_cast<Eigen::Index>(i) * stride;
            params.segment<3>(o) = params.segment<3>(o).cwiseMax(0.0).cwiseMin(1.0);
            g.color = params.segment<3>(o);
            // Keep the stored value when the logit has not moved, so a no-op step is exact.
            g.opacity = params[o + 3] == initial[o + 3] ? original.gaussians[i].opacity : sigmoid(params[o + 3]);
            g.feature = params.segment(o + 4, v);
        }
    }
    result.scene = std::move(scene);
    return result;
}

void write_loss_history(const std::filesystem::path& path, std::span<const LossRecord> history) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "iteration,L_color,L_features,L_GS\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const LossRecord& r : history) {
        out << r.iteration << ',' << r.loss.color << ',' << r.loss.features << ',' << r.loss.total() << '\n';
    }
}

}  // namespace splatloc
