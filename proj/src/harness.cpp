#include "splatloc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "splatloc/errors.hpp"
#include "splatloc/renderer.hpp"

namespace splatloc {

namespace {

struct Face {
    Vec3 origin, e1, e2;
    Vec3 normal() const { return e1.cross(e2).normalized(); }
    double area() const { return e1.cross(e2).norm(); }
};

std::vector<Face> desk_faces(std::mt19937_64& rng, const WorldConfig& c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double l = c.table_size;
    std::vector<Face> faces{{Vec3(-l / 2, -l / 2, 0), Vec3(l, 0, 0), Vec3(0, l, 0)}};
    for (int b = 0; b < c.boxes; ++b) {
        const double sx = l * (0.12 + 0.13 * u(rng)), sy = l * (0.12 + 0.13 * u(rng));
        const double h = l * (0.08 + 0.22 * u(rng));
        const double yaw = 2.0 * std::numbers::pi * u(rng);
        const Vec3 center(l * (0.7 * u(rng) - 0.35), l * (0.7 * u(rng) - 0.35), 0.0);
        const Vec3 ax(std::cos(yaw), std::sin(yaw), 0), ay(-std::sin(yaw), std::cos(yaw), 0), up(0, 0, 1);
        const Vec3 corner = center - 0.5 * sx * ax - 0.5 * sy * ay;
        faces.push_back({corner + h * up, sx * ax, sy * ay});                // top
        faces.push_back({corner, up * h, sx * ax});                          // -y side
        faces.push_back({corner + sy * ay, sx * ax, up * h});                // +y side
        faces.push_back({corner, sy * ay, up * h});                          // -x side
        faces.push_back({corner + sx * ax, up * h, sy * ay});                // +x side
    }
    return faces;
}

Pose look_at(const Vec3& eye, const Vec3& target, double roll) {
    const Vec3 f = (target - eye).normalized();
    Vec3 r = f.cross(Vec3::UnitZ());
    if (r.norm() < 1e-9) r = Vec3::UnitX();
    r.normalize();
    const Vec3 d = f.cross(r);
    Mat3 rot;
    rot.row(0) = r.transpose();
    rot.row(1) = d.transpose();
    rot.row(2) = f.transpose();
    rot = so3_exp(Vec3(0, 0, roll)) * rot;
    Pose p{rotmat_to_quat(rot), Vec3::Zero()};
    p.translation = -(p.rotation_matrix() * eye);
    return p;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

}  // namespace

double mean_coverage(const Scene& scene, const Pose& pose, const CameraIntrinsics& k) {
    const RenderOutput out = render(scene, pose, k, Channels::depth);
    double sum = 0.0;
    for (double a : out.alpha.data()) sum += a;
    return sum / static_cast<double>(out.alpha.pixel_count());
}

std::vector<Pose> sample_cameras(const Scene& scene, const CameraIntrinsics& k, std::uint64_t seed, int n,
                                 const WorldConfig& c) {
    if (n < 1) throw InvalidInput("need at least one camera");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double deg = std::numbers::pi / 180.0;
    std::vector<Pose> out;
    for (int i = 0; i < n; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt <= c.max_retries && !ok; ++attempt) {
            const double az = phase + 2.0 * std::numbers::pi * (i + 0.5 * (u(rng) - 0.5)) / n;
            const double el = deg * (c.min_elevation_deg + (c.max_elevation_deg - c.min_elevation_deg) * u(rng));
            const double radius = c.min_radius + (c.max_radius - c.min_radius) * u(rng);
            const Vec3 eye = radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
            const Vec3 target(0.05 * c.table_size * g(rng), 0.05 * c.table_size * g(rng), 0.05 * c.table_size);
            const Pose p = look_at(eye, target, 3.0 * deg * g(rng));
            if (mean_coverage(scene, p, k) > c.min_coverage) {
                out.push_back(p);
                ok = true;
            }
        }
        if (!ok) {
            throw InvalidInput("camera " + std::to_string(i) + " fails the coverage check after " +
                               std::to_string(c.max_retries) + " retries");
        }
    }
    return out;
}

SyntheticWorld generate_world(std::uint64_t seed, int n_gaussians, int n_views, int feature_dim,
                              const WorldConfig& c) {
    if (n_gaussians < 1) throw InvalidInput("need at least one Gaussian");
    if (n_views < 1) throw InvalidInput("need at least one view");
    if (feature_dim < 1) throw InvalidInput("feature dimension must be positive");
    if (c.width < 1 || c.height < 1 || !(c.focal > 0.0) || !(c.table_size > 0.0) || c.boxes < 0 ||
        !(c.min_radius > 0.0) || c.max_radius < c.min_radius || c.max_retries < 0) {
        throw InvalidInput("invalid world configuration");
    }
    SyntheticWorld w;
    w.seed = seed;
    w.k = {c.focal * c.width, c.focal * c.width, (c.width - 1) / 2.0, (c.height - 1) / 2.0, c.width, c.height};

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<Face> faces = desk_faces(rng, c);
    std::vector<double> areas;
    std::vector<Vec3> base;
    double total = 0.0;
    for (const Face& f : faces) {
        areas.push_back(f.area());
        total += f.area();
        base.emplace_back(u(rng), u(rng), u(rng));
    }
    std::discrete_distribution<int> pick(areas.begin(), areas.end());
    const double s0 = 0.5 * std::sqrt(total / n_gaussians);

    w.scene.feature_dim = feature_dim;
    w.scene.background = Vec3(0.05, 0.05, 0.08);
    for (int i = 0; i < n_gaussians; ++i) {
        const int fi = pick(rng);
        const Face& f = faces[fi];
        Gaussian gs;
        gs.position = f.origin + u(rng) * f.e1 + u(rng) * f.e2;
        const Vec3 n = f.normal();
        const double spin = 2.0 * std::numbers::pi * u(rng);
        const Vec3 t1 = std::cos(spin) * f.e1.normalized() + std::sin(spin) * n.cross(f.e1.normalized());
        Mat3 frame;
        frame << t1, n.cross(t1), n;
        gs.rotation = rotmat_to_quat(frame);
        gs.scale = Vec3(s0 * (0.7 + 0.6 * u(rng)), s0 * (0.7 + 0.6 * u(rng)), 0.05 * s0);
        gs.opacity = 0.5 + 0.45 * u(rng);
        gs.color = 0.35 * base[fi] + 0.65 * Vec3(u(rng), u(rng), u(rng));
        gs.feature = procedural_descriptor(seed, static_cast<std::size_t>(i), feature_dim);
        w.scene.gaussians.push_back(std::move(gs));
    }
    w.poses = sample_cameras(w.scene, w.k, rng(), n_views, c);
    return w;
}

double scene_diameter(const Scene& scene) {
    double best = 0.0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (std::size_t j = i + 1; j < scene.size(); ++j) {
            best = std::max(best, (scene.gaussians[i].position - scene.gaussians[j].position).squaredNorm());
        }
    }
    return std::sqrt(best);
}

Scene reset_attributes(const Scene& scene) {
    Scene out = scene;
    for (Gaussian& g : out.gaussians) {
        g.opacity = 0.5;
        g.color = Vec3::Constant(0.5);
        g.feature = Eigen::VectorXd::Zero(scene.feature_dim);
    }
    return out;
}

double lower_median(std::vector<double> v) {
    if (v.empty()) throw InvalidInput("median of an empty list");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

EvalReport evaluate(std::span<const Pose> est, std::span<const Pose> gt) {
    if (est.size() != gt.size()) {
        throw InvalidInput("got " + std::to_string(est.size()) + " estimates for " + std::to_string(gt.size()) +
                           " ground-truth poses");
    }
    if (est.empty()) throw InvalidInput("nothing to evaluate");
    EvalReport r;
    for (std::size_t i = 0; i < est.size(); ++i) {
        r.translation_cm.push_back(100.0 * translation_error(est[i], gt[i]));
        r.rotation_deg.push_back(rotation_error_deg(est[i], gt[i]));
    }
    r.median_translation_cm = lower_median(r.translation_cm);
    r.median_rotation_deg = lower_median(r.rotation_deg);
    for (const auto& [cm, deg] : {std::pair{10.0, 5.0}, {5.0, 5.0}, {2.0, 2.0}, {1.0, 1.0}}) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            hits += r.translation_cm[i] < cm && r.rotation_deg[i] < deg;
        }
        r.buckets.push_back({cm, deg, 100.0 * static_cast<double>(hits) / static_cast<double>(est.size())});
    }
    return r;
}

void write_report(std::ostream& out, const EvalReport& r, std::span<const std::string> names) {
    out << "# frames " << r.translation_cm.size() << '\n';
    out << "median_translation_cm " << r.median_translation_cm << '\n';
    out << "median_rotation_deg " << r.median_rotation_deg << '\n';
    for (const ThresholdBucket& b : r.buckets) {
        out << "within_" << b.cm << "cm_" << b.deg << "deg_percent " << b.percent << '\n';
    }
    out << "# name translation_cm rotation_deg\n";
    for (std::size_t i = 0; i < r.translation_cm.size(); ++i) {
        out << (i < names.size() ? names[i] : std::to_string(i)) << ' ' << r.translation_cm[i] << ' '
            << r.rotation_deg[i] << '\n';
    }
}

void write_poses(const std::filesystem::path& path, std::span<const NamedPose> poses) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# name qw qx qy qz tx ty tz (world to camera)\n";
    for (const NamedPose& p : poses) {
        if (p.name.empty() || p.name.find_first_of(" \t\n#") != std::string::npos) {
            throw InvalidInput("pose name '" + p.name + "' must be a single non-empty token");
        }
        const Quaternion& q = p.pose.rotation;
        const Vec3& t = p.pose.translation;
        out << p.name;
        for (double v : {q.w, q.x, q.y, q.z, t.x(), t.y(), t.z()}) out << ' ' << fmt(v);
        out << '\n';
    }
}

std::vector<NamedPose> read_poses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<NamedPose> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream s(line);
        NamedPose p;
        Quaternion q;
        Vec3 t;
        if (!(s >> p.name >> q.w >> q.x >> q.y >> q.z >> t.x() >> t.y() >> t.z())) {
            throw ParseError(path.string(), n, "expected 'name qw qx qy qz tx ty tz'");
        }
        std::string extra;
        if (s >> extra) throw ParseError(path.string(), n, "trailing field '" + extra + "'");
        if (!(q.norm() > 0.0)) throw ParseError(path.string(), n, "zero quaternion");
        p.pose = {q, t};
        out.push_back(std::move(p));
    }
    return out;
}

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# fx fy cx cy width height\n"
        << fmt(k.fx) << ' ' << fmt(k.fy) << ' ' << fmt(k.cx) << ' ' << fmt(k.cy) << ' ' << k.width << ' '
        << k.height << '\n';
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream s(line);
        CameraIntrinsics k;
        if (!(s >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
            throw ParseError(path.string(), n, "expected 'fx fy cx cy width height'");
        }
        k.validate();
        return k;
    }
    throw ParseError(path.string(), 0, "no intrinsics line");
}

namespace {

// Non-comment lines with their 1-based line numbers. Blank lines are kept because the
// second line of an images.txt entry may legitimately be empty.
std::vector<std::pair<std::size_t, std::string>> data_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    std::vector<std::pair<std::size_t, std::string>> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] == '#') continue;
        out.emplace_back(n, line);
    }
    return out;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

}  // namespace

ColmapModel load_colmap(const std::filesystem::path& dir, int feature_dim) {
    if (feature_dim < 0) throw InvalidInput("feature dimension must be non-negative");
    ColmapModel m;

    const auto cams_path = dir / "cameras.txt";
    for (const auto& [n, line] : data_lines(cams_path)) {
        if (blank(line)) continue;
        std::istringstream s(line);
        std::uint32_t id;
        std::string model;
        int w, h;
        if (!(s >> id >> model >> w >> h)) throw ParseError(cams_path.string(), n, "expected 'ID MODEL WIDTH HEIGHT PARAMS'");
        CameraIntrinsics k;
        k.width = w;
        k.height = h;
        if (model == "SIMPLE_PINHOLE") {
            double f, cx, cy;
            if (!(s >> f >> cx >> cy)) throw ParseError(cams_path.string(), n, "SIMPLE_PINHOLE needs f cx cy");
            k.fx = k.fy = f;
            k.cx = cx - 0.5;
            k.cy = cy - 0.5;
        } else if (model == "PINHOLE") {
            double fx, fy, cx, cy;
            if (!(s >> fx >> fy >> cx >> cy)) throw ParseError(cams_path.string(), n, "PINHOLE needs fx fy cx cy");
            k.fx = fx;
            k.fy = fy;
            k.cx = cx - 0.5;
            k.cy = cy - 0.5;
        } else {
            throw InvalidInput(cams_path.string() + ":" + std::to_string(n) + ": unsupported camera model " + model +
                               " (only PINHOLE and SIMPLE_PINHOLE)");
        }
        try {
            k.validate();
        } catch (const InvalidInput& e) {
            throw ParseError(cams_path.string(), n, e.what());
        }
        m.cameras[id] = k;
    }

    const auto imgs_path = dir / "images.txt";
    const auto img_lines = data_lines(imgs_path);
    for (std::size_t i = 0; i < img_lines.size(); ++i) {
        const auto& [n, line] = img_lines[i];
        if (blank(line)) continue;
        std::istringstream s(line);
        ColmapImage im;
        Quaternion q;
        Vec3 t;
        if (!(s >> im.id >> q.w >> q.x >> q.y >> q.z >> t.x() >> t.y() >> t.z() >> im.camera_id >> im.name)) {
            throw ParseError(imgs_path.string(), n, "expected 'ID QW QX QY QZ TX TY TZ CAMERA_ID NAME'");
        }
        if (!(q.norm() > 0.0)) throw ParseError(imgs_path.string(), n, "zero quaternion");
        if (!m.cameras.count(im.camera_id)) {
            throw ParseError(imgs_path.string(), n, "unknown camera id " + std::to_string(im.camera_id));
        }
        if (i + 1 >= img_lines.size()) {
            throw ParseError(imgs_path.string(), n, "missing the 2D point line after image " + std::to_string(im.id));
        }
        ++i;  // 2D observations are not needed
        im.pose = {normalize(q), t};
        m.images.push_back(std::move(im));
    }

    const auto pts_path = dir / "points3D.txt";
    for (const auto& [n, line] : data_lines(pts_path)) {
        if (blank(line)) continue;
        std::istringstream s(line);
        ColmapPoint p;
        int r, g, b;
        if (!(s >> p.id >> p.position.x() >> p.position.y() >> p.position.z() >> r >> g >> b)) {
            throw ParseError(pts_path.string(), n, "expected 'ID X Y Z R G B ERROR TRACK'");
        }
        p.color = Vec3(r, g, b) / 255.0;
        m.points.push_back(p);
    }

    m.scene.feature_dim = feature_dim;
    for (std::size_t i = 0; i < m.points.size(); ++i) {
        double nn = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.points.size(); ++j) {
            if (j != i) nn = std::min(nn, (m.points[i].position - m.points[j].position).norm());
        }
        if (!std::isfinite(nn) || nn <= 0.0) nn = 1e-2;
        Gaussian g;
        g.position = m.points[i].position;
        g.scale = Vec3::Constant(nn);
        g.opacity = 0.5;
        g.color = m.points[i].color;
        g.feature = Eigen::VectorXd::Zero(feature_dim);
        m.scene.gaussians.push_back(std::move(g));
    }
    return m;
}

}  // namespace splatloc
