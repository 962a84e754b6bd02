#include "splatloc/pnp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "splatloc/errors.hpp"

namespace splatloc {

namespace {

// Real roots of sum_i c[i] x^(n-i), leading coefficient first.
std::vector<double> real_roots(std::vector<double> c) {
    while (c.size() > 1 && std::abs(c.front()) < 1e-14 * (std::abs(c.back()) + 1e-300) + 1e-300) {
        c.erase(c.begin());
    }
    const int n = static_cast<int>(c.size()) - 1;
    std::vector<double> roots;
    if (n < 1) return roots;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) companion(0, i) = -c[i + 1] / c[0];
    for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
    for (int i = 0; i < n; ++i) {
        const auto z = es.eigenvalues()[i];
        if (std::abs(z.imag()) > 1e-6 * (1.0 + std::abs(z.real()))) continue;
        double x = z.real();
        for (int it = 0; it < 3; ++it) {  // Newton polish
            double p = c[0], dp = 0.0;
            for (int k = 1; k <= n; ++k) {
                dp = dp * x + p;
                p = p * x + c[k];
            }
            if (dp == 0.0) break;
            x -= p / dp;
        }
        roots.push_back(x);
    }
    return roots;
}

// Rigid transform taking world points onto camera points (least squares).
std::optional<Pose> align(const std::array<Vec3, 3>& world, const std::array<Vec3, 3>& cam) {
    const Vec3 pw = (world[0] + world[1] + world[2]) / 3.0;
    const Vec3 pc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Mat3 h = Mat3::Zero();
    for (int i = 0; i < 3; ++i) h += (world[i] - pw) * (cam[i] - pc).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    if (!r.allFinite()) return std::nullopt;
    return Pose{rotmat_to_quat(r), pc - r * pw};
}

Vec3 bearing(const Vec2& px, const CameraIntrinsics& k) {
    return Vec3((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy, 1.0).normalized();
}

double cost(std::span<const PointMatch> m, const Mat3& r, const Vec3& t, const CameraIntrinsics& k) {
    double c = 0.0;
    for (const PointMatch& pm : m) {
        const Vec3 p = r * pm.world + t;
        if (!(p.z() > kDefaultDepthEpsilon)) return std::numeric_limits<double>::infinity();
        const double du = k.fx * p.x() / p.z() + k.cx - pm.pixel.x();
        const double dv = k.fy * p.y() / p.z() + k.cy - pm.pixel.y();
        c += du * du + dv * dv;
    }
    return c;
}

// Best P3P solution on matches[i0..i2], disambiguated by matches[i3].
std::optional<Pose> minimal_solve(std::span<const PointMatch> m, const std::array<std::size_t, 4>& idx,
                                  const CameraIntrinsics& k) {
    const std::array<Vec3, 3> b{bearing(m[idx[0]].pixel, k), bearing(m[idx[1]].pixel, k), bearing(m[idx[2]].pixel, k)};
    const std::array<Vec3, 3> w{m[idx[0]].world, m[idx[1]].world, m[idx[2]].world};
    std::optional<Pose> best;
    double best_err = std::numeric_limits<double>::infinity();
    for (const Pose& p : solve_p3p(b, w)) {
        const double e = reprojection_error(m[idx[3]], p, k);
        if (e < best_err) {
            best_err = e;
            best = p;
        }
    }
    return best;
}

void check_degenerate(std::span<const PointMatch> m) {
    double spread = 0.0;
    for (const PointMatch& pm : m) spread = std::max(spread, (pm.pixel - m[0].pixel).norm());
    if (spread < 1e-9) {
        throw SolverFailure("degenerate configuration: all observations at one pixel");
    }
    Vec3 mean = Vec3::Zero();
    for (const PointMatch& pm : m) mean += pm.world;
    mean /= static_cast<double>(m.size());
    Mat3 scatter = Mat3::Zero();
    for (const PointMatch& pm : m) scatter += (pm.world - mean) * (pm.world - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
    const auto ev = es.eigenvalues();  // ascending
    if (!(ev[2] > 0.0) || ev[1] < 1e-12 * ev[2]) {
        throw SolverFailure("degenerate configuration: world points are collinear or coincident");
    }
}

}  // namespace

std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& bearings, const std::array<Vec3, 3>& world) {
    const Vec3 j1 = bearings[0].normalized(), j2 = bearings[1].normalized(), j3 = bearings[2].normalized();
    const double a2 = (world[1] - world[2]).squaredNorm();
    const double b2 = (world[0] - world[2]).squaredNorm();
    const double c2 = (world[0] - world[1]).squaredNorm();
    std::vector<Pose> out;
    if (a2 < 1e-24 || b2 < 1e-24 || c2 < 1e-24) return out;
    const double ca = j2.dot(j3), cb = j1.dot(j3), cg = j1.dot(j2);
    if (std::max({ca, cb, cg}) > 1.0 - 1e-15) return out;  // coincident rays

    // Grunert's quartic in v = s3 / s1 (Haralick et al. formulation).
    const double amc = (a2 - c2) / b2, apc = (a2 + c2) / b2, bmc = (b2 - c2) / b2, bma = (b2 - a2) / b2;
    const double A4 = (amc - 1) * (amc - 1) - 4 * c2 / b2 * ca * ca;
    const double A3 = 4 * (amc * (1 - amc) * cb - (1 - apc) * ca * cg + 2 * c2 / b2 * ca * ca * cb);
    const double A2 = 2 * (amc * amc - 1 + 2 * amc * amc * cb * cb + 2 * bmc * ca * ca - 4 * apc * ca * cb * cg +
                           2 * bma * cg * cg);
    const double A1 = 4 * (-amc * (1 + amc) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - apc) * ca * cg);
    const double A0 = (1 + amc) * (1 + amc) - 4 * a2 / b2 * cg * cg;

    for (double v : real_roots({A4, A3, A2, A1, A0})) {
        if (!(v > 0.0)) continue;
        const double den = 1 + v * v - 2 * v * cb;
        if (!(den > 0.0)) continue;
        const double s1 = std::sqrt(b2 / den);
        const double s3 = v * s1;
        // s2 from the c^2 law of cosines; keep the root that best satisfies the a^2 one.
        const double disc = s1 * s1 * cg * cg - (s1 * s1 - c2);
        if (disc < -1e-9 * c2) continue;
        const double sq = std::sqrt(std::max(disc, 0.0));
        double s2 = -1.0, best = std::numeric_limits<double>::infinity();
        for (double cand : {s1 * cg + sq, s1 * cg - sq}) {
            if (!(cand > 0.0)) continue;
            const double r = std::abs(cand * cand + s3 * s3 - 2 * cand * s3 * ca - a2);
            if (r < best) {
                best = r;
                s2 = cand;
            }
        }
        if (!(s2 > 0.0) || best > 1e-6 * a2) continue;
        if (auto p = align(world, {s1 * j1, s2 * j2, s3 * j3})) out.push_back(*p);
    }
    return out;
}

double reprojection_error(const PointMatch& m, const Pose& pose, const CameraIntrinsics& k) {
    const Vec3 p = pose.transform(m.world);
    if (!(p.z() > kDefaultDepthEpsilon)) return std::numeric_limits<double>::infinity();
    return (Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy) - m.pixel).norm();
}

double reprojection_rms(std::span<const PointMatch> matches, const Pose& pose, const CameraIntrinsics& k) {
    if (matches.empty()) return 0.0;
    return std::sqrt(cost(matches, pose.rotation_matrix(), pose.translation, k) / static_cast<double>(matches.size()));
}

Pose refine_pnp(std::span<const PointMatch> m, const CameraIntrinsics& k, const Pose& initial, int max_iterations) {
    Mat3 r = initial.rotation_matrix();
    Vec3 t = initial.translation;
    double current = cost(m, r, t, k);
    double lambda = 1e-3;
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    for (int it = 0; it < max_iterations && std::isfinite(current) && current > 0.0; ++it) {
        Mat6 jtj = Mat6::Zero();
        Vec6 jtr = Vec6::Zero();
        for (const PointMatch& pm : m) {
            const Vec3 rx = r * pm.world;
            const Vec3 p = rx + t;
            const double iz = 1.0 / p.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << k.fx * iz, 0, -k.fx * p.x() * iz * iz, 0, k.fy * iz, -k.fy * p.y() * iz * iz;
            Eigen::Matrix<double, 2, 6> j;
            j.leftCols<3>() = -dproj * skew(rx);  // left-multiplied rotation increment
            j.rightCols<3>() = dproj;
            const Vec2 res(k.fx * p.x() * iz + k.cx - pm.pixel.x(), k.fy * p.y() * iz + k.cy - pm.pixel.y());
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
        }
        bool improved = false;
        for (int attempt = 0; attempt < 10 && !improved; ++attempt) {
            Mat6 a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
            const Vec6 step = -a.ldlt().solve(jtr);
            if (!step.allFinite()) break;
            const Mat3 r_new = so3_exp(step.head<3>()) * r;
            const Vec3 t_new = t + step.tail<3>();
            const double c_new = cost(m, r_new, t_new, k);
            if (c_new < current) {
                const double gain = current - c_new;
                r = r_new;
                t = t_new;
                current = c_new;
                lambda = std::max(lambda / 3.0, 1e-12);
                improved = true;
                if (gain <= 1e-15 * (1.0 + current) && step.norm() < 1e-12) it = max_iterations;
            } else {
                lambda *= 5.0;
            }
        }
        if (!improved) break;
    }
    // Re-orthonormalize through the quaternion.
    return {rotmat_to_quat(r), t};
}

Pose solve_pnp(std::span<const PointMatch> m, const CameraIntrinsics& k) {
    if (m.size() < 4) {
        throw InsufficientData("PnP needs at least 4 correspondences, got " + std::to_string(m.size()));
    }
    check_degenerate(m);

    // Spread-out first sample: farthest-point selection in the image.
    std::array<std::size_t, 4> idx{0, 0, 0, 0};
    for (int s = 1; s < 4; ++s) {
        double far = -1.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (int q = 0; q < s; ++q) d = std::min(d, (m[i].pixel - m[idx[q]].pixel).norm());
            if (d > far) {
                far = d;
                idx[s] = i;
            }
        }
    }
    std::vector<std::array<std::size_t, 4>> samples{idx};
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    const int extra = m.size() > 4 ? 24 : 0;
    for (int s = 0; s < extra; ++s) {
        std::vector<std::size_t> all(m.size());
        std::iota(all.begin(), all.end(), 0);
        for (int q = 0; q < 4; ++q) {
            std::uniform_int_distribution<std::size_t> pick(q, all.size() - 1);
            std::swap(all[q], all[pick(rng)]);
        }
        samples.push_back({all[0], all[1], all[2], all[3]});
    }
    // Rotate each sample so every point gets a turn as the disambiguator.
    std::optional<Pose> best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (auto s : samples) {
        for (int rot = 0; rot < 4; ++rot) {
            std::rotate(s.begin(), s.begin() + 1, s.end());
            if (auto p = minimal_solve(m, s, k)) {
                const double c = cost(m, p->rotation_matrix(), p->translation, k);
                if (c < best_cost) {
                    best_cost = c;
                    best = p;
                }
            }
        }
    }
    if (!best) {
        throw SolverFailure("no valid minimal solution with all points in front of the camera");
    }
    const Pose pose = refine_pnp(m, k, *best);
    for (const PointMatch& pm : m) {
        if (!(pose.transform(pm.world).z() > kDefaultDepthEpsilon)) {
            throw SolverFailure("PnP solution places a point behind the camera");
        }
    }
    return pose;
}

void RansacConfig::validate() const {
    if (iterations < 1) throw InvalidInput("RANSAC needs at least one iteration");
    if (!(threshold > 0.0)) throw InvalidInput("RANSAC threshold must be positive");
    if (sample_size < 4) throw InvalidInput("RANSAC sample size must be at least 4");
}

RansacResult ransac_pnp(std::span<const PointMatch> m, const CameraIntrinsics& k, const RansacConfig& config) {
    config.validate();
    const std::size_t n = m.size();
    const auto sample_size = static_cast<std::size_t>(config.sample_size);
    if (n < sample_size) {
        throw InsufficientData("RANSAC needs at least " + std::to_string(sample_size) + " correspondences, got " +
                               std::to_string(n));
    }
    const double thr2 = config.threshold * config.threshold;
    auto score = [&](const Pose& pose, std::vector<bool>* mask) {
        const Mat3 r = pose.rotation_matrix();
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 p = r * m[i].world + pose.translation;
            bool in = false;
            if (p.z() > kDefaultDepthEpsilon) {
                const double du = k.fx * p.x() / p.z() + k.cx - m[i].pixel.x();
                const double dv = k.fy * p.y() / p.z() + k.cy - m[i].pixel.y();
                in = du * du + dv * dv < thr2;
            }
            count += in;
            if (mask) (*mask)[i] = in;
        }
        return count;
    };

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::optional<Pose> best;
    std::size_t best_count = 0;
    int it = 0;
    while (it < config.iterations) {
        ++it;
        // Partial Fisher-Yates on a fixed pool keeps the draw sequence seed-determined.
        for (std::size_t q = 0; q < sample_size; ++q) {
            std::uniform_int_distribution<std::size_t> pick(q, n - 1);
            std::swap(pool[q], pool[pick(rng)]);
        }
        const std::array<std::size_t, 4> idx{pool[0], pool[1], pool[2], pool[3]};
        const auto hyp = minimal_solve(m, idx, k);
        if (!hyp) continue;
        const std::size_t c = score(*hyp, nullptr);
        if (c > best_count) {
            best_count = c;
            best = hyp;
            if (static_cast<double>(c) > config.early_exit_ratio * static_cast<double>(n)) break;
        }
    }
    if (!best || best_count < sample_size) {
        throw SolverFailure("RANSAC failed: best hypothesis has " + std::to_string(best_count) + " inliers of " +
                            std::to_string(n) + " after " + std::to_string(it) + " iterations (threshold " +
                            std::to_string(config.threshold) + " px)");
    }

    RansacResult result;
    result.iterations_run = it;
    result.hypothesis_inliers = best_count;
    result.pose = *best;
    result.inliers.assign(n, false);
    result.inlier_count = score(*best, &result.inliers);

    // Refit on the inlier set until it stops growing.
    for (int round = 0; round < 5; ++round) {
        std::vector<PointMatch> in;
        for (std::size_t i = 0; i < n; ++i)
            if (result.inliers[i]) in.push_back(m[i]);
        const Pose refit = refine_pnp(in, k, result.pose);
        std::vector<bool> mask(n, false);
        const std::size_t c = score(refit, &mask);
        if (c < result.inlier_count) break;
        const bool grew = c > result.inlier_count;
        result.pose = refit;
        result.inliers = std::move(mask);
        result.inlier_count = c;
        if (!grew) break;
    }
    return result;
}

}  // namespace splatloc
