#pragma once

// Independent reference computations used by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "splatloc/distill.hpp"
#include "splatloc/image.hpp"
#include "splatloc/refinement.hpp"
#include "splatloc/renderer.hpp"
#include "test_support.hpp"

namespace splatloc::test {

/// SSIM by explicit per-window weighted sums with a 2-D Gaussian window
/// (no separable filtering), valid region only.
inline double reference_ssim(const Image& a, const Image& b, int win = 11, double sigma = 1.5) {
    const double c1 = 1e-4, c2 = 9e-4;
    std::vector<double> w(static_cast<std::size_t>(win) * win);
    double sum = 0.0;
    const double half = (win - 1) / 2.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double d2 = (i - half) * (i - half) + (j - half) * (j - half);
            sum += w[i * win + j] = std::exp(-d2 / (2 * sigma * sigma));
        }
    for (double& x : w) x /= sum;
    double total = 0.0;
    int count = 0;
    for (int ch = 0; ch < a.channels(); ++ch)
        for (int r = 0; r + win <= a.height(); ++r)
            for (int c = 0; c + win <= a.width(); ++c) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double wt = w[i * win + j];
                        const double x = a.at(r + i, c + j, ch), y = b.at(r + i, c + j, ch);
                        mx += wt * x;
                        my += wt * y;
                    }
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double wt = w[i * win + j];
                        const double x = a.at(r + i, c + j, ch) - mx, y = b.at(r + i, c + j, ch) - my;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                ++count;
            }
    return total / count;
}

/// Deterministic hash image reproducible outside C++: frac(sin(12.9898 r + 78.233 c + 37.719 ch + seed) * 43758.5453).
inline Image hash_image(int h, int w, double seed) {
    Image img(w, h, 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double x = std::sin(12.9898 * r + 78.233 * c + 37.719 * ch + seed) * 43758.5453;
                img.at(r, c, ch) = x - std::floor(x);
            }
    return img;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, int ch, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, ch);
    for (double& v : img.data()) v = u(rng);
    return img;
}

struct GradientCheck {
    double max_rel_error = 0.0;
    int checked = 0;
    int samples = 0;  // loss terms involved, where that applies
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences of view_loss against its analytic gradients, over every
/// color, opacity and feature entry of a random scene of `n` splats.
inline GradientCheck check_distill_gradients(std::uint64_t seed, int n = 8, int size = 16, int v = 3,
                                             double lambda = 0.2, double h = 1e-6) {
    std::mt19937_64 rng(seed);
    const CameraIntrinsics k{static_cast<double>(size), static_cast<double>(size), size / 2.0, size / 2.0, size, size};
    Scene scene = random_scene(rng, n, v, k);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (Gaussian& g : scene.gaussians) {
        g.color = Vec3(u(rng), u(rng), u(rng));
        g.opacity = 0.2 + 0.7 * u(rng);
    }
    TrainView view{random_image(rng, size, size, 3), random_image(rng, size, size, v, -1.0, 1.0), Pose::identity(), k};

    AttributeGradients grads;
    view_loss(scene, view, lambda, &grads);
    auto loss_at = [&](const Scene& s) { return view_loss(s, view, lambda, nullptr).total(); };

    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            Scene p = scene, m = scene;
            p.gaussians[i].color[c] += h;
            m.gaussians[i].color[c] -= h;
            pairs.emplace_back(grads.color[i][c], (loss_at(p) - loss_at(m)) / (2 * h));
        }
        {
            Scene p = scene, m = scene;
            p.gaussians[i].opacity += h;
            m.gaussians[i].opacity -= h;
            pairs.emplace_back(grads.opacity[i], (loss_at(p) - loss_at(m)) / (2 * h));
        }
        for (int c = 0; c < v; ++c) {
            Scene p = scene, m = scene;
            p.gaussians[i].feature[c] += h;
            m.gaussians[i].feature[c] -= h;
            pairs.emplace_back(grads.feature[i][c], (loss_at(p) - loss_at(m)) / (2 * h));
        }
    }
    double scale = 0.0;
    for (const auto& [a, nd] : pairs) scale = std::max(scale, std::abs(nd));
    GradientCheck out;
    for (const auto& [a, nd] : pairs) {
        out.max_rel_error = std::max(out.max_rel_error, relative_error(a, nd, 1e-4 * scale));
        ++out.checked;
    }
    return out;
}

/// Analytic warp-loss gradient against central differences over the 7 raw pose
/// parameters. Samples whose warped position lies within `grid_margin` px of a
/// bilinear grid line, or within 1 px of the border, are left out so that the
/// sampled loss is smooth under the step.
inline GradientCheck check_warp_gradient(std::uint64_t seed, int size = 40, double h = 1e-5,
                                         double grid_margin = 0.05) {
    std::mt19937_64 rng(seed);
    const CameraIntrinsics k{1.2 * size, 1.2 * size, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
    Scene scene = random_scene(rng, 60, 1, k);
    scene.background = Vec3(0.2, 0.3, 0.4);
    const Pose render_pose = Pose::identity();
    std::normal_distribution<double> n(0.0, 1.0);
    const auto jitter = [&](double rot, double trans) {
        const Vec3 axis(n(rng), n(rng), n(rng));
        return Pose{Quaternion::from_axis_angle(axis.normalized(), rot * n(rng)),
                    Vec3(trans * n(rng), trans * n(rng), trans * n(rng))};
    };
    const RenderOutput ref = render(scene, render_pose, k, Channels::rgb | Channels::depth);
    const RenderOutput q = render(scene, jitter(0.03, 0.03), k, Channels::rgb);
    const WarpProblem problem(q.rgb, ref.rgb, ref.depth, render_pose, k);
    const Pose opt = jitter(0.02, 0.02);
    // Scale the quaternion off unit length to exercise the normalization chain.
    PoseParams params = to_params(opt);
    params.head<4>() *= 1.3;

    std::vector<bool> active(problem.sample_count(), false);
    const auto samples = problem.warp_samples(opt);
    int kept = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vec2 w = samples[i].warped;
        const double fx = w.x() - std::floor(w.x()), fy = w.y() - std::floor(w.y());
        active[i] = samples[i].valid && w.x() > 1 && w.y() > 1 && w.x() < size - 2 && w.y() < size - 2 &&
                    fx > grid_margin && fx < 1 - grid_margin && fy > grid_margin && fy < 1 - grid_margin;
        kept += active[i];
    }
    GradientCheck out;
    if (kept < 100) return out;

    PoseParams grad;
    problem.loss_and_gradient(params, &grad, &active);
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 7; ++i) {
        PoseParams p = params, m = params;
        p[i] += h;
        m[i] -= h;
        const double nd =
            (problem.loss_and_gradient(p, nullptr, &active) - problem.loss_and_gradient(m, nullptr, &active)) / (2 * h);
        pairs.emplace_back(grad[i], nd);
    }
    double scale = 0.0;
    for (const auto& [a, nd] : pairs) scale = std::max(scale, std::abs(nd));
    for (const auto& [a, nd] : pairs) {
        out.max_rel_error = std::max(out.max_rel_error, relative_error(a, nd, 1e-3 * scale));
        ++out.checked;
    }
    out.samples = kept;
    return out;
}

/// Maximum deviations of the rendering invariants on one random scene of `n` splats.
/// Every field is zero (or non-positive) for an exact renderer.
struct RenderInvariants {
    double permutation = 0.0;        // |render(shuffled) - render|, all channels
    double transmittance_rise = 0.0; // largest increase of T along a pixel's blending order
    double weight_excess = 0.0;      // largest sum(w) - 1
    double sharing = 0.0;            // |rendered rgb/features - sum(w * attribute)|
    double occluder = 0.0;           // change under an opaque splat when the scene behind it changes
};

inline double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline RenderInvariants check_render_invariants(std::uint64_t seed, int n = 50, int size = 32, int v = 4) {
    std::mt19937_64 rng(seed);
    const CameraIntrinsics k{1.2 * size, 1.2 * size, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
    const Scene scene = random_scene(rng, n, v, k);
    RenderInvariants out;

    RenderTrace trace;
    const RenderOutput base = render_traced(scene, Pose::identity(), k, Channels::all, trace);
    Scene shuffled = scene;
    std::shuffle(shuffled.gaussians.begin(), shuffled.gaussians.end(), rng);
    const RenderOutput perm = render(shuffled, Pose::identity(), k, Channels::all);
    out.permutation = std::max({max_abs_diff(base.rgb, perm.rgb), max_abs_diff(base.features, perm.features),
                                max_abs_diff(base.depth, perm.depth), max_abs_diff(base.alpha, perm.alpha)});

    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            double prev = 1.0;
            for (const auto& e : trace.at(r, c)) {
                out.transmittance_rise = std::max(out.transmittance_rise, e.transmittance - prev);
                prev = e.transmittance;
            }
            Vec3 color = Vec3::Zero();
            Eigen::VectorXd feat = Eigen::VectorXd::Zero(v);
            double sum = 0.0;
            for (const auto& [idx, w] : compositing_weights(scene, Pose::identity(), k, c, r)) {
                color += w * scene.gaussians[idx].color;
                feat += w * scene.gaussians[idx].feature;
                sum += w;
            }
            out.weight_excess = std::max(out.weight_excess, sum - 1.0);
            color += (1.0 - sum) * scene.background;
            for (int ch = 0; ch < 3; ++ch)
                out.sharing = std::max(out.sharing, std::abs(color[ch] - base.rgb.at(r, c, ch)));
            for (int ch = 0; ch < v; ++ch)
                out.sharing = std::max(out.sharing, std::abs(feat[ch] - base.features.at(r, c, ch)));
        }

    // An opaque splat centered on a pixel, nearer than everything else, hides the rest there.
    std::uniform_int_distribution<int> px(4, size - 5);
    const int oc = px(rng), orow = px(rng);
    Gaussian occ;
    const double z = 0.5;
    occ.position = Vec3((oc - k.cx) / k.fx * z, (orow - k.cy) / k.fy * z, z);
    occ.scale = Vec3::Constant(0.02);
    occ.opacity = 1.0;
    occ.color = Vec3(0.3, 0.6, 0.9);
    occ.feature = Eigen::VectorXd::Constant(v, 0.25);
    Scene front = scene, other = random_scene(rng, n, v, k);
    front.gaussians.push_back(occ);
    other.gaussians.push_back(occ);
    other.background = scene.background;
    const RenderOutput a = render(front, Pose::identity(), k, Channels::all);
    const RenderOutput b = render(other, Pose::identity(), k, Channels::all);
    for (int ch = 0; ch < 3; ++ch) {
        out.occluder = std::max(out.occluder, std::abs(a.rgb.at(orow, oc, ch) - occ.color[ch]));
        out.occluder = std::max(out.occluder, std::abs(b.rgb.at(orow, oc, ch) - occ.color[ch]));
    }
    for (int ch = 0; ch < v; ++ch)
        out.occluder = std::max(out.occluder, std::abs(a.features.at(orow, oc, ch) - b.features.at(orow, oc, ch)));
    out.occluder = std::max(out.occluder, std::abs(a.depth.at(orow, oc, 0) - z));
    return out;
}

}  // namespace splatloc::test
