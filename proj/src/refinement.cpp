#include "splatloc/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "splatloc/adam.hpp"
#include "splatloc/errors.hpp"
#include "splatloc/renderer.hpp"

namespace splatloc {

namespace {

constexpr double kZeroResidual = 1e-12;
constexpr double kDivergenceFloor = 1e-9;  // below this the initial loss is treated as exact

// Bilinear lookup with derivatives in x (column) and y (row). `out`, `dx`, `dy` hold
// image.channels() values each; derivatives may be null.
bool sample(const Image& img, double x, double y, double* out, double* dx, double* dy) {
    const int w = img.width(), h = img.height(), ch = img.channels();
    if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return false;
    const int x0 = w > 1 ? std::min(static_cast<int>(std::floor(x)), w - 2) : 0;
    const int y0 = h > 1 ? std::min(static_cast<int>(std::floor(y)), h - 2) : 0;
    const int x1 = w > 1 ? x0 + 1 : x0;
    const int y1 = h > 1 ? y0 + 1 : y0;
    const double ax = x - x0, ay = y - y0;
    const auto p00 = img.pixel(y0, x0), p01 = img.pixel(y0, x1);
    const auto p10 = img.pixel(y1, x0), p11 = img.pixel(y1, x1);
    for (int c = 0; c < ch; ++c) {
        const double top = (1 - ax) * p00[c] + ax * p01[c];
        const double bot = (1 - ax) * p10[c] + ax * p11[c];
        out[c] = (1 - ay) * top + ay * bot;
        if (dx) dx[c] = (1 - ay) * (p01[c] - p00[c]) + ay * (p11[c] - p10[c]);
        if (dy) dy[c] = bot - top;
    }
    return true;
}

}  // namespace

void RefineConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidInput("refinement learning rate must be positive");
    if (iterations < 0) throw InvalidInput("refinement iterations must be non-negative");
    if (feature_rounds < 1) throw InvalidInput("feature refinement needs at least one round");
    if (!(tolerance >= 0.0)) throw InvalidInput("convergence tolerance must be non-negative");
    if (sample_stride < 0) throw InvalidInput("sample stride must be non-negative");
    if (!(divergence_factor > 1.0)) throw InvalidInput("divergence factor must exceed 1");
    if (divergence_patience < 1) throw InvalidInput("divergence patience must be at least 1");
    if (feature_keypoints < 1) throw InvalidInput("feature refinement needs at least one keypoint");
    feature_ransac.validate();
}

std::optional<Eigen::VectorXd> bilinear_sample(const Image& image, const Vec2& pixel) {
    Eigen::VectorXd out(image.channels());
    if (!sample(image, pixel.x(), pixel.y(), out.data(), nullptr, nullptr)) return std::nullopt;
    return out;
}

WarpSample warp(const Vec2& pixel, const Pose& render_pose, const Pose& opt_pose, double depth,
                const CameraIntrinsics& k) {
    WarpSample s{pixel, pixel, false};
    if (!(depth > 0.0) || depth == kDepthSentinel) return s;
    const Vec3 world = inverse(render_pose).transform(backproject(pixel, depth, k));
    const Vec3 cam = opt_pose.transform(world);
    if (!(cam.z() > kDefaultDepthEpsilon)) return s;
    s.warped = project_camera(cam, k).pixel;
    s.valid = true;
    return s;
}

PoseParams to_params(const Pose& p) {
    PoseParams out;
    out << p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z, p.translation;
    return out;
}

Pose from_params(const PoseParams& p) {
    return {normalize(Quaternion{p[0], p[1], p[2], p[3]}), p.tail<3>()};
}

WarpProblem::WarpProblem(Image query, Image rendered, const Image& depth, const Pose& render_pose,
                         const CameraIntrinsics& k, int sample_stride)
    : query_(std::move(query)), rendered_(std::move(rendered)), render_pose_(render_pose), k_(k) {
    k.validate();
    require_same_shape(query_, rendered_, "query and rendered image");
    if (depth.width() != rendered_.width() || depth.height() != rendered_.height() || depth.channels() != 1) {
        throw ShapeMismatch("depth map does not match the rendered image");
    }
    if (rendered_.width() != k.width || rendered_.height() != k.height) {
        throw ShapeMismatch("rendered image does not match the intrinsics");
    }
    if (sample_stride < 1) throw InvalidInput("sample stride must be positive");
    const Pose to_world = inverse(render_pose);
    for (int r = 0; r < depth.height(); r += sample_stride) {
        for (int c = 0; c < depth.width(); c += sample_stride) {
            const double z = depth.at(r, c, 0);
            if (!(z > 0.0) || z == kDepthSentinel) continue;
            const Vec2 p(c, r);
            pixels_.push_back(p);
            world_.push_back(to_world.transform(backproject(p, z, k)));
        }
    }
}

double WarpProblem::loss(const Pose& opt_pose) const { return loss_and_gradient(to_params(opt_pose), nullptr); }

double WarpProblem::loss_and_gradient(const PoseParams& params, PoseParams* gradient,
                                      const std::vector<bool>* active) const {
    if (active && active->size() != pixels_.size()) throw InvalidInput("sample mask has the wrong length");
    const Eigen::Vector4d q4 = params.head<4>();
    const double qn = q4.norm();
    if (!(qn > 0.0)) throw InvalidInput("pose quaternion has zero norm");
    const Eigen::Vector4d qh = q4 / qn;
    const double qw = qh[0];
    const Vec3 qv = qh.tail<3>();
    const Mat3 rot = quat_to_rotmat(Quaternion{qh[0], qh[1], qh[2], qh[3]});
    const Vec3 t = params.tail<3>();

    const int ch = query_.channels();
    std::vector<double> y(ch), dyx(ch), dyy(ch);
    double total = 0.0;
    std::size_t count = 0;
    Eigen::Vector4d gq = Eigen::Vector4d::Zero();
    Vec3 gt = Vec3::Zero();

    for (std::size_t i = 0; i < pixels_.size(); ++i) {
        if (active && !(*active)[i]) continue;
        const Vec3& x = world_[i];
        const Vec3 p = rot * x + t;
        if (!(p.z() > kDefaultDepthEpsilon)) continue;
        const double iz = 1.0 / p.z();
        const double u = k_.fx * p.x() * iz + k_.cx;
        const double v = k_.fy * p.y() * iz + k_.cy;
        if (!sample(query_, u, v, y.data(), gradient ? dyx.data() : nullptr, gradient ? dyy.data() : nullptr)) {
            continue;
        }
        const auto ref = rendered_.pixel(static_cast<int>(pixels_[i].y()), static_cast<int>(pixels_[i].x()));
        double sq = 0.0;
        for (int c = 0; c < ch; ++c) {
            y[c] -= ref[c];
            sq += y[c] * y[c];
        }
        const double norm = std::sqrt(sq);
        total += norm;
        ++count;
        // |r| has no derivative at zero; roundoff-sized residuals contribute nothing.
        if (!gradient || norm < kZeroResidual) continue;

        double gu = 0.0, gv = 0.0;
        for (int c = 0; c < ch; ++c) {
            gu += y[c] * dyx[c];
            gv += y[c] * dyy[c];
        }
        gu /= norm;
        gv /= norm;
        const Vec3 gp(gu * k_.fx * iz, gv * k_.fy * iz, -(gu * k_.fx * p.x() + gv * k_.fy * p.y()) * iz * iz);
        gt += gp;
        // R x = x + 2w (v x x) + 2 v x (v x x) for a unit quaternion (w, v).
        gq[0] += 2.0 * gp.dot(qv.cross(x));
        const Mat3 jv = -2.0 * qw * skew(x) +
                        2.0 * (qv.dot(x) * Mat3::Identity() + qv * x.transpose() - 2.0 * x * qv.transpose());
        gq.tail<3>() += jv.transpose() * gp;
    }
    if (count == 0) throw NoOverlap("no valid warp samples");
    const double inv = 1.0 / static_cast<double>(count);
    if (gradient) {
        // Chain through q / |q|.
        const Eigen::Vector4d g = (gq - qh * qh.dot(gq)) / qn;
        gradient->head<4>() = g * inv;
        gradient->tail<3>() = gt * inv;
    }
    return total * inv;
}

std::vector<WarpSample> WarpProblem::warp_samples(const Pose& opt_pose) const {
    std::vector<WarpSample> out;
    out.reserve(pixels_.size());
    for (std::size_t i = 0; i < pixels_.size(); ++i) {
        WarpSample s{pixels_[i], pixels_[i], false};
        const Vec3 cam = opt_pose.transform(world_[i]);
        if (cam.z() > kDefaultDepthEpsilon) {
            s.warped = project_camera(cam, k_).pixel;
            s.valid = s.warped.x() >= 0.0 && s.warped.y() >= 0.0 && s.warped.x() <= k_.width - 1 &&
                      s.warped.y() <= k_.height - 1;
        }
        out.push_back(s);
    }
    return out;
}

Image WarpProblem::overlay(const Pose& opt_pose) const {
    Image out(query_.width(), query_.height(), query_.channels());
    for (const WarpSample& s : warp_samples(opt_pose)) {
        if (!s.valid) continue;
        sample(query_, s.warped.x(), s.warped.y(),
               out.pixel(static_cast<int>(s.source.y()), static_cast<int>(s.source.x())).data(), nullptr, nullptr);
    }
    return out;
}

double warp_loss(const Image& query, const Image& rendered, const Image& depth, const Pose& render_pose,
                 const Pose& opt_pose, const CameraIntrinsics& k) {
    return WarpProblem(query, rendered, depth, render_pose, k).loss(opt_pose);
}

namespace {

int effective_stride(const RefineConfig& config, const CameraIntrinsics& k) {
    if (config.sample_stride > 0) return config.sample_stride;
    return k.width * k.height > 640 * 480 ? 2 : 1;
}

}  // namespace

WarpResult refine_warp(const Image& query, const Scene& scene, const Pose& coarse_pose, const CameraIntrinsics& k,
                       const RefineConfig& config) {
    config.validate();
    const RenderOutput ref = render(scene, coarse_pose, k, Channels::rgb | Channels::depth);
    const WarpProblem problem(query, ref.rgb, ref.depth, coarse_pose, k, effective_stride(config, k));

    WarpResult out;
    PoseParams params = to_params(coarse_pose);
    PoseParams grad;
    Adam adam(7, config.learning_rate);
    out.pose = coarse_pose;
    int above = 0;
    for (int it = 0; it <= config.iterations; ++it) {
        double loss;
        try {
            loss = problem.loss_and_gradient(params, &grad);
        } catch (const NoOverlap&) {
            if (it == 0) throw;
            break;  // drifted out of view; keep the best iterate
        }
        out.trace.push_back(loss);
        out.path.push_back(from_params(params));
        if (it == 0) {
            out.initial_loss = out.best_loss = loss;
        } else if (loss < out.best_loss) {
            out.best_loss = loss;
            out.best_iteration = it;
            out.pose = out.path.back();
        }
        // Adam's first steps move every coordinate by about lr, which can briefly multiply a tiny
        // initial loss; only a sustained excursion counts as divergence.
        above = out.initial_loss > kDivergenceFloor && loss > config.divergence_factor * out.initial_loss ? above + 1 : 0;
        if (above >= config.divergence_patience) {
            out.diverged = true;
            out.diagnostic = "loss " + std::to_string(loss) + " above " + std::to_string(config.divergence_factor) +
                             "x the initial " + std::to_string(out.initial_loss) + " for " + std::to_string(above) +
                             " iterations (stopped at " + std::to_string(it) + ")";
            break;
        }
        if (it == config.iterations) break;
        if (it > 0 && config.tolerance > 0.0 &&
            std::abs(out.trace[it] - out.trace[it - 1]) < config.tolerance) {
            break;
        }
        adam.step(params, grad);
        params.head<4>().normalize();
    }
    return out;
}

FeatureRefineResult refine_feature(const QueryImage& query, const Scene& scene, const Pose& pose,
                                   const CameraIntrinsics& k, const DescriptorProvider& provider,
                                   const RefineConfig& config) {
    config.validate();
    if (provider.dim() != scene.feature_dim) {
        throw ShapeMismatch("provider dimension " + std::to_string(provider.dim()) +
                            " does not match scene dimension " + std::to_string(scene.feature_dim));
    }
    const KeypointSet keypoints = provider.sparse_keypoints(query, config.feature_keypoints);
    const int v = scene.feature_dim;

    std::vector<Eigen::Index> usable;
    Eigen::MatrixXd qd(static_cast<Eigen::Index>(keypoints.size()), v);
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        const double n = keypoints.descriptors[i].norm();
        if (!(n > 0.0)) continue;
        qd.row(static_cast<Eigen::Index>(usable.size())) = keypoints.descriptors[i].transpose() / n;
        usable.push_back(static_cast<Eigen::Index>(i));
    }
    qd.conservativeResize(static_cast<Eigen::Index>(usable.size()), v);

    FeatureRefineResult out;
    out.pose = pose;
    for (int round = 0; round < config.feature_rounds; ++round) {
        const RenderOutput r = render(scene, out.pose, k, Channels::features | Channels::depth);
        std::vector<Vec2> cand_pixel;
        std::vector<Vec3> cand_world;
        Eigen::MatrixXd cand(v, static_cast<Eigen::Index>(r.depth.pixel_count()));
        const Pose to_world = inverse(out.pose);
        for (int row = 0; row < k.height; ++row) {
            for (int col = 0; col < k.width; ++col) {
                const double z = r.depth.at(row, col, 0);
                if (!(z > 0.0) || z == kDepthSentinel) continue;
                const Eigen::Map<const Eigen::VectorXd> f(r.features.pixel(row, col).data(), v);
                const double n = f.norm();
                if (!(n > 0.0)) continue;
                cand.col(static_cast<Eigen::Index>(cand_pixel.size())) = f / n;
                cand_pixel.emplace_back(col, row);
                cand_world.push_back(to_world.transform(backproject(cand_pixel.back(), z, k)));
            }
        }
        const auto m = static_cast<Eigen::Index>(cand_pixel.size());
        std::vector<PointMatch> matches;
        if (m > 0) {
            constexpr Eigen::Index kBlock = 64;
            for (Eigen::Index b = 0; b < qd.rows(); b += kBlock) {
                const Eigen::Index rows = std::min(kBlock, qd.rows() - b);
                const Eigen::MatrixXd sims = qd.middleRows(b, rows) * cand.leftCols(m);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    Eigen::Index arg;
                    sims.row(i).maxCoeff(&arg);  // first maximum, i.e. lowest row-major pixel
                    matches.push_back({keypoints.pixels[usable[b + i]], cand_world[arg]});
                }
            }
        }
        try {
            const RansacResult res = ransac_pnp(matches, k, config.feature_ransac);
            out.pose = res.pose;
            out.inliers_per_round.push_back(res.inlier_count);
            ++out.rounds_run;
        } catch (const InsufficientData&) {
            out.insufficient = true;
            break;
        } catch (const SolverFailure&) {
            out.insufficient = true;
            break;
        }
    }
    return out;
}

Variant parse_variant(const std::string& s) {
    if (s == "coarse") return Variant::coarse;
    if (s == "base") return Variant::base;
    if (s == "fine") return Variant::fine;
    throw InvalidInput("unknown variant '" + s + "' (expected coarse, base or fine)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::coarse: return "coarse";
        case Variant::base: return "base";
        case Variant::fine: return "fine";
    }
    return "?";
}

LocalizeReport localize(const QueryImage& query, const Scene& scene, const CameraIntrinsics& k,
                        const DescriptorProvider& provider, const LocalizeConfig& config, Variant variant) {
    config.refine.validate();
    LocalizeReport rep;
    rep.variant = variant;
    const CoarseResult coarse = localize_coarse(query, scene, k, provider, config.coarse);
    rep.pose = rep.coarse_pose = coarse.pose;
    rep.coarse_inliers = coarse.ransac.inlier_count;
    rep.correspondences = coarse.correspondences.size();
    if (variant == Variant::coarse) return rep;

    if (variant == Variant::fine) {
        try {
            rep.feature = refine_feature(query, scene, rep.pose, k, provider, config.refine);
            rep.pose = rep.feature->pose;
            if (rep.feature->insufficient) {
                rep.notes.push_back("feature refinement stopped after " + std::to_string(rep.feature->rounds_run) +
                                    " rounds: too few matches");
            }
        } catch (const Error& e) {
            rep.notes.push_back(std::string("feature refinement failed: ") + e.what());
        }
    }
    try {
        rep.warp = refine_warp(query.rgb, scene, rep.pose, k, config.refine);
        rep.pose = rep.warp->pose;
        if (rep.warp->diverged) rep.notes.push_back("warp refinement diverged: " + rep.warp->diagnostic);
    } catch (const Error& e) {
        rep.notes.push_back(std::string("warp refinement failed: ") + e.what());
    }
    return rep;
}

void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "iteration,loss\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

void write_warp_trace(const std::filesystem::path& path, const WarpResult& r) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "iteration,loss,qw,qx,qy,qz,tx,ty,tz\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
        const Pose& p = i < r.path.size() ? r.path[i] : r.pose;
        out << i << ',' << r.trace[i] << ',' << p.rotation.w << ',' << p.rotation.x << ',' << p.rotation.y << ','
            << p.rotation.z << ',' << p.translation.x() << ',' << p.translation.y() << ',' << p.translation.z() << '\n';
    }
}

WarpResult read_warp_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    WarpResult r;
    std::string line;
    std::getline(in, line);
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream s(line);
        std::size_t it;
        double loss;
        Quaternion q;
        Vec3 t;
        if (!(s >> it >> loss >> q.w >> q.x >> q.y >> q.z >> t.x() >> t.y() >> t.z())) {
            throw ParseError(path.string(), n, "expected iteration,loss,qw,qx,qy,qz,tx,ty,tz");
        }
        r.trace.push_back(loss);
        r.path.push_back({q, t});
    }
    if (r.trace.empty()) throw ParseError(path.string(), 0, "empty trace");
    r.initial_loss = r.trace.front();
    const auto best = std::min_element(r.trace.begin(), r.trace.end());
    r.best_iteration = static_cast<int>(best - r.trace.begin());
    r.best_loss = *best;
    r.pose = r.path[static_cast<std::size_t>(r.best_iteration)];
    return r;
}

}  // namespace splatloc
