#include "splatloc/coarse_pose.hpp"

#include <fstream>
#include <iomanip>
#include <limits>

#include "splatloc/errors.hpp"

namespace splatloc {

std::vector<Correspondence> match(const KeypointSet& query, const Scene& scene, const MatchOptions& options) {
    query.validate();
    if (scene.empty()) throw InvalidInput("cannot match against an empty scene");
    if (query.size() > 0 && query.dim() != scene.feature_dim) {
        throw ShapeMismatch("query descriptors have dimension " + std::to_string(query.dim()) + ", scene has " +
                            std::to_string(scene.feature_dim));
    }
    const int v = scene.feature_dim;
    const auto n = static_cast<Eigen::Index>(scene.size());
    Eigen::MatrixXd points(v, n);
    std::vector<bool> usable(scene.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd& f = scene.gaussians[i].feature;
        const double norm = f.norm();
        usable[i] = norm > 0.0;
        points.col(i) = usable[i] ? Eigen::VectorXd(f / norm) : Eigen::VectorXd::Zero(v);
    }

    struct Best {
        Eigen::Index index = -1;
        double sim = -std::numeric_limits<double>::infinity();
    };
    std::vector<Best> best(query.size());
    std::vector<Eigen::VectorXd> unit(query.size());
    for (std::size_t q = 0; q < query.size(); ++q) {
        const double norm = query.descriptors[q].norm();
        if (!(norm > 0.0)) continue;
        unit[q] = query.descriptors[q] / norm;
        const Eigen::VectorXd sims = points.transpose() * unit[q];
        for (Eigen::Index i = 0; i < n; ++i) {
            if (usable[i] && sims[i] > best[q].sim) best[q] = {i, sims[i]};
        }
    }

    std::vector<Correspondence> out;
    out.reserve(query.size());
    for (std::size_t q = 0; q < query.size(); ++q) {
        if (best[q].index < 0) continue;
        if (options.mutual) {
            // The matched point's own best query must be q.
            const Eigen::VectorXd p = points.col(best[q].index);
            std::size_t back = q;
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t o = 0; o < query.size(); ++o) {
                if (unit[o].size() == 0) continue;
                const double s = unit[o].dot(p);
                if (s > top) {
                    top = s;
                    back = o;
                }
            }
            if (back != q) continue;
        }
        out.push_back({query.pixels[q], static_cast<std::uint32_t>(best[q].index), best[q].sim});
    }
    return out;
}

std::vector<PointMatch> to_point_matches(std::span<const Correspondence> c, const Scene& scene) {
    std::vector<PointMatch> out;
    out.reserve(c.size());
    for (const Correspondence& x : c) {
        if (x.point_index >= scene.size()) throw InvalidInput("correspondence refers to a missing Gaussian");
        out.push_back({x.pixel, scene.gaussians[x.point_index].position});
    }
    return out;
}

CoarseResult localize_coarse(const QueryImage& query, const Scene& scene, const CameraIntrinsics& k,
                             const DescriptorProvider& provider, const CoarseConfig& config) {
    if (provider.dim() != scene.feature_dim) {
        throw ShapeMismatch("provider dimension " + std::to_string(provider.dim()) + " does not match scene dimension " +
                            std::to_string(scene.feature_dim));
    }
    CoarseResult out;
    const KeypointSet keypoints = provider.sparse_keypoints(query, config.keypoints);
    out.correspondences = match(keypoints, scene, config.matching);
    const auto matches = to_point_matches(out.correspondences, scene);
    out.ransac = ransac_pnp(matches, k, config.ransac);
    out.pose = out.ransac.pose;
    return out;
}

void write_correspondences(const std::filesystem::path& path, std::span<const Correspondence> c) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# u v point_index similarity\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const Correspondence& x : c) {
        out << x.pixel.x() << ' ' << x.pixel.y() << ' ' << x.point_index << ' ' << x.similarity << '\n';
    }
}

}  // namespace splatloc
