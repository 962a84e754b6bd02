#include "splatloc/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <numeric>

#include "splatloc/errors.hpp"

namespace splatloc {

std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const Pose& pose,
                                                  const CameraIntrinsics& k, double covariance_floor) {
    const Mat3 w = pose.rotation_matrix();
    const Vec3 p = w * g.position + pose.translation;
    if (!(p.z() > kNearPlane)) {
        return std::nullopt;
    }
    const Mat3 rs = quat_to_rotmat(g.rotation) * g.scale.asDiagonal();
    const Mat3 cov3 = rs * rs.transpose();

    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz,
         0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> t = j * w;
    Mat2 cov2 = t * cov3 * t.transpose();
    cov2(0, 1) = cov2(1, 0) = 0.5 * (cov2(0, 1) + cov2(1, 0));
    cov2(0, 0) += covariance_floor;
    cov2(1, 1) += covariance_floor;

    return ProjectedGaussian{Vec2(k.fx * p.x() * iz + k.cx, k.fy * p.y() * iz + k.cy), cov2, p.z()};
}

namespace {

constexpr int kTileSize = 16;

struct Splat {
    std::uint32_t index;
    double cx, cy;
    double ca, cb, cc;  // inverse covariance [ca cb; cb cc]
    double depth;
    double opacity;
};

// Strict weak order on Gaussian content, so that blending order does not depend
// on the position of a Gaussian in the scene list.
bool content_less(const Gaussian& a, const Gaussian& b) {
    auto key = [](const Gaussian& g) {
        return std::array<double, 14>{g.position.x(), g.position.y(), g.position.z(), g.rotation.w,
                                      g.rotation.x,   g.rotation.y,   g.rotation.z,   g.scale.x(),
                                      g.scale.y(),    g.scale.z(),    g.opacity,      g.color.x(),
                                      g.color.y(),    g.color.z()};
    };
    const auto ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    return std::lexicographical_compare(a.feature.data(), a.feature.data() + a.feature.size(),
                                        b.feature.data(), b.feature.data() + b.feature.size());
}

class Rasterizer {
public:
    Rasterizer(const Scene& scene, const Pose& pose, const CameraIntrinsics& k) : k_(k) {
        k.validate();
        tiles_x_ = (k.width + kTileSize - 1) / kTileSize;
        tiles_y_ = (k.height + kTileSize - 1) / kTileSize;
        tiles_.resize(static_cast<std::size_t>(tiles_x_) * tiles_y_);

        struct Candidate {
            Splat splat;
            int x0, x1, y0, y1;
        };
        std::vector<Candidate> candidates;
        candidates.reserve(scene.size());
        for (std::uint32_t i = 0; i < scene.size(); ++i) {
            const Gaussian& g = scene.gaussians[i];
            const auto proj = project_gaussian(g, pose, k);
            if (!proj) continue;
            const Mat2& s = proj->covariance;
            const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(0, 1);
            if (!(det > 0.0)) continue;
            const double rx = kSigmaCutoff * std::sqrt(s(0, 0));
            const double ry = kSigmaCutoff * std::sqrt(s(1, 1));
            const double u = proj->center.x(), v = proj->center.y();
            if (!std::isfinite(u) || !std::isfinite(v)) continue;
            const double fx0 = std::ceil(u - rx), fx1 = std::floor(u + rx);
            const double fy0 = std::ceil(v - ry), fy1 = std::floor(v + ry);
            if (fx1 < 0 || fy1 < 0 || fx0 > k.width - 1 || fy0 > k.height - 1) continue;
            Candidate c;
            c.splat = {i, u, v, s(1, 1) / det, -s(0, 1) / det, s(0, 0) / det, proj->depth, g.opacity};
            c.x0 = static_cast<int>(std::max(fx0, 0.0));
            c.x1 = static_cast<int>(std::min(fx1, k.width - 1.0));
            c.y0 = static_cast<int>(std::max(fy0, 0.0));
            c.y1 = static_cast<int>(std::min(fy1, k.height - 1.0));
            candidates.push_back(c);
        }
        std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
            if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
            return content_less(scene.gaussians[a.splat.index], scene.gaussians[b.splat.index]);
        });
        splats_.reserve(candidates.size());
        for (const Candidate& c : candidates) {
            const auto slot = static_cast<std::uint32_t>(splats_.size());
            splats_.push_back(c.splat);
            for (int ty = c.y0 / kTileSize; ty <= c.y1 / kTileSize; ++ty) {
                for (int tx = c.x0 / kTileSize; tx <= c.x1 / kTileSize; ++tx) {
                    tiles_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(slot);
                }
            }
        }
    }

    // Calls f(splat, falloff, alpha_hat, transmittance) front to back.
    template <class F>
    void blend(int row, int col, F&& f) const {
        const auto& list = tiles_[static_cast<std::size_t>(row / kTileSize) * tiles_x_ + col / kTileSize];
        double t = 1.0;
        for (std::uint32_t slot : list) {
            const Splat& s = splats_[slot];
            const double dx = col - s.cx;
            const double dy = row - s.cy;
            const double m = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
            if (m > kSigmaCutoff * kSigmaCutoff) continue;
            const double falloff = std::exp(-0.5 * m);
            const double a = s.opacity * falloff;
            if (a < kMinSplatAlpha) continue;
            f(s, falloff, a, t);
            t *= 1.0 - a;
            if (t <= 0.0) break;
        }
    }

private:
    CameraIntrinsics k_;
    int tiles_x_ = 0;
    int tiles_y_ = 0;
    std::vector<Splat> splats_;
    std::vector<std::vector<std::uint32_t>> tiles_;
};

RenderOutput render_impl(const Scene& scene, const Pose& pose, const CameraIntrinsics& k, Channels channels,
                         RenderTrace* trace) {
    scene.validate();
    const Rasterizer raster(scene, pose, k);
    const int w = k.width, h = k.height, v = scene.feature_dim;
    const bool want_rgb = has(channels, Channels::rgb);
    const bool want_feat = has(channels, Channels::features);
    const bool want_depth = has(channels, Channels::depth);

    RenderOutput out;
    out.alpha = Image(w, h, 1);
    if (want_rgb) out.rgb = Image(w, h, 3);
    if (want_feat) out.features = Image(w, h, v);
    if (want_depth) out.depth = Image(w, h, 1, kDepthSentinel);
    if (trace) {
        trace->width = w;
        trace->height = h;
        trace->offsets.assign(1, 0);
        trace->offsets.reserve(static_cast<std::size_t>(w) * h + 1);
        trace->entries.clear();
    }

    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            double wsum = 0.0;
            double zsum = 0.0;
            double rgb[3] = {0.0, 0.0, 0.0};
            double* feat = want_feat ? out.features.pixel(row, col).data() : nullptr;
            raster.blend(row, col, [&](const Splat& s, double falloff, double a, double t) {
                const double wt = a * t;
                const Gaussian& g = scene.gaussians[s.index];
                wsum += wt;
                zsum += wt * s.depth;
                rgb[0] += wt * g.color[0];
                rgb[1] += wt * g.color[1];
                rgb[2] += wt * g.color[2];
                if (feat) {
                    const double* f = g.feature.data();
                    for (int c = 0; c < v; ++c) feat[c] += wt * f[c];
                }
                if (trace) trace->entries.push_back({s.index, falloff, a, t});
            });
            if (trace) trace->offsets.push_back(static_cast<std::uint32_t>(trace->entries.size()));
            out.alpha.at(row, col, 0) = wsum;
            if (want_rgb) {
                for (int c = 0; c < 3; ++c) {
                    out.rgb.at(row, col, c) = rgb[c] + scene.background[c] * (1.0 - wsum);
                }
            }
            if (want_depth && wsum >= kDepthAlphaMin) {
                out.depth.at(row, col, 0) = zsum / wsum;
            }
        }
    }
    return out;
}

}  // namespace

RenderOutput render(const Scene& scene, const Pose& pose, const CameraIntrinsics& k, Channels channels) {
    return render_impl(scene, pose, k, channels, nullptr);
}

RenderOutput render_traced(const Scene& scene, const Pose& pose, const CameraIntrinsics& k, Channels channels,
                           RenderTrace& trace) {
    return render_impl(scene, pose, k, channels, &trace);
}

std::vector<Contribution> compositing_weights(const Scene& scene, const Pose& pose, const CameraIntrinsics& k,
                                              int col, int row) {
    scene.validate();
    if (col < 0 || row < 0 || col >= k.width || row >= k.height) {
        throw InvalidInput("pixel outside the image");
    }
    const Rasterizer raster(scene, pose, k);
    std::vector<Contribution> out;
    raster.blend(row, col, [&](const Splat& s, double, double a, double t) { out.push_back({s.index, a * t}); });
    return out;
}

}  // namespace splatloc
