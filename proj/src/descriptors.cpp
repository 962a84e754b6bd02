#include "splatloc/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "splatloc/errors.hpp"
#include "splatloc/io.hpp"
#include "splatloc/renderer.hpp"

namespace splatloc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Image normalized_by_max(Image m) {
    const double top = m.data().empty() ? 0.0 : *std::max_element(m.data().begin(), m.data().end());
    if (top > 0.0) {
        for (double& v : m.data()) v /= top;
    }
    return m;
}

}  // namespace

void KeypointSet::validate() const {
    if (descriptors.size() != pixels.size() || reliability.size() != pixels.size()) {
        throw InvalidInput("keypoint lists differ in length");
    }
    for (const auto& d : descriptors) {
        if (d.size() != dim()) {
            throw InvalidInput("keypoint descriptors differ in dimension");
        }
    }
}

Image gradient_reliability(const Image& f) {
    const int w = f.width(), h = f.height(), v = f.channels();
    Image out(w, h, 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, w - 1);
            const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, h - 1);
            double sum = 0.0;
            for (int ch = 0; ch < v; ++ch) {
                const double gx = c1 > c0 ? (f.at(r, c1, ch) - f.at(r, c0, ch)) / (c1 - c0) : 0.0;
                const double gy = r1 > r0 ? (f.at(r1, c, ch) - f.at(r0, c, ch)) / (r1 - r0) : 0.0;
                sum += gx * gx + gy * gy;
            }
            out.at(r, c, 0) = std::sqrt(sum);
        }
    }
    return normalized_by_max(std::move(out));
}

Image norm_reliability(const Image& f) {
    Image out(f.width(), f.height(), 1);
    for (int r = 0; r < f.height(); ++r) {
        for (int c = 0; c < f.width(); ++c) {
            double sum = 0.0;
            for (double x : f.pixel(r, c)) sum += x * x;
            out.at(r, c, 0) = std::sqrt(sum);
        }
    }
    return normalized_by_max(std::move(out));
}

KeypointSet select_keypoints(const Image& features, const Image& rel, std::size_t k) {
    if (k < 1) {
        throw InvalidInput("keypoint count must be at least 1");
    }
    if (rel.width() != features.width() || rel.height() != features.height() || rel.channels() != 1) {
        throw ShapeMismatch("reliability map does not match the feature map");
    }
    const std::size_t n = rel.pixel_count();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto& r = rel.data();
    const std::size_t take = std::min(k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) { return r[a] != r[b] ? r[a] > r[b] : a < b; });

    KeypointSet out;
    out.truncated = take < k;
    out.pixels.reserve(take);
    out.descriptors.reserve(take);
    out.reliability.reserve(take);
    const int w = features.width(), v = features.channels();
    for (std::size_t i = 0; i < take; ++i) {
        const int row = static_cast<int>(order[i] / w), col = static_cast<int>(order[i] % w);
        const auto px = features.pixel(row, col);
        out.pixels.emplace_back(col, row);
        out.descriptors.emplace_back(Eigen::Map<const Eigen::VectorXd>(px.data(), v));
        out.reliability.push_back(r[order[i]]);
    }
    return out;
}

KeypointSet DescriptorProvider::sparse_keypoints(const QueryImage& image, std::size_t k) const {
    if (k < 1) {
        throw InvalidInput("keypoint count must be at least 1");
    }
    const FeatureMap f = dense_features(image);
    return select_keypoints(f.map, reliability(f), k);
}

Image DescriptorProvider::reliability(const FeatureMap& features) const { return gradient_reliability(features.map); }

Eigen::VectorXd procedural_descriptor(std::uint64_t seed, std::size_t index, int dim) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index + 0x5bd1e995ULL)));
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd d(dim);
    do {
        for (int i = 0; i < dim; ++i) d[i] = n(rng);
    } while (dim > 0 && d.norm() == 0.0);
    if (dim > 0) d.normalize();
    return d;
}

Image upsample_bilinear(const Image& grid, int stride, int width, int height) {
    if (stride < 1) {
        throw InvalidInput("grid stride must be positive");
    }
    const int nx = grid.width(), ny = grid.height(), v = grid.channels();
    Image out(width, height, v);
    for (int r = 0; r < height; ++r) {
        const double gy = static_cast<double>(r) / stride;
        const int y0 = std::min(static_cast<int>(gy), ny - 1);
        const int y1 = std::min(y0 + 1, ny - 1);
        const double fy = y1 > y0 ? gy - y0 : 0.0;
        for (int c = 0; c < width; ++c) {
            const double gx = static_cast<double>(c) / stride;
            const int x0 = std::min(static_cast<int>(gx), nx - 1);
            const int x1 = std::min(x0 + 1, nx - 1);
            const double fx = x1 > x0 ? gx - x0 : 0.0;
            auto dst = out.pixel(r, c);
            const auto a = grid.pixel(y0, x0), b = grid.pixel(y0, x1);
            const auto d = grid.pixel(y1, x0), e = grid.pixel(y1, x1);
            for (int ch = 0; ch < v; ++ch) {
                dst[ch] = (1 - fy) * ((1 - fx) * a[ch] + fx * b[ch]) + fy * ((1 - fx) * d[ch] + fx * e[ch]);
            }
        }
    }
    return out;
}

SyntheticProvider::SyntheticProvider(Scene reference, CameraIntrinsics k, SyntheticProviderConfig config)
    : reference_(std::move(reference)), k_(k), config_(config) {
    reference_.validate();
    k_.validate();
    if (config_.grid_stride < 1 || !(config_.noise_sigma >= 0.0)) {
        throw InvalidInput("synthetic provider: stride must be >= 1 and noise >= 0");
    }
}

FeatureMap SyntheticProvider::dense_features(const QueryImage& image) const {
    if (image.rgb.width() != k_.width || image.rgb.height() != k_.height) {
        throw InvalidInput("synthetic provider: image is " + std::to_string(image.rgb.width()) + "x" +
                           std::to_string(image.rgb.height()) + ", expected " + std::to_string(k_.width) + "x" +
                           std::to_string(k_.height));
    }
    if (!image.oracle_pose) {
        throw InvalidInput("synthetic provider needs the oracle pose of '" + image.name + "'");
    }
    const Image full = render(reference_, *image.oracle_pose, k_, Channels::features).features;
    const int s = config_.grid_stride;
    const int nx = (k_.width - 1) / s + 1, ny = (k_.height - 1) / s + 1;
    Image grid(nx, ny, reference_.feature_dim);
    std::mt19937_64 rng(splitmix64(config_.seed ^ fnv1a(image.name)));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const auto src = full.pixel(j * s, i * s);
            auto dst = grid.pixel(j, i);
            for (std::size_t ch = 0; ch < dst.size(); ++ch) {
                dst[ch] = src[ch] + (config_.noise_sigma > 0.0 ? config_.noise_sigma * noise(rng) : 0.0);
            }
        }
    }
    return {s == 1 ? std::move(grid) : upsample_bilinear(grid, s, k_.width, k_.height), s};
}

Image SyntheticProvider::reliability(const FeatureMap& features) const {
    return config_.reliability == ReliabilityMode::norm ? norm_reliability(features.map)
                                                         : gradient_reliability(features.map);
}

FileProvider::FileProvider(std::filesystem::path dir, int dim) : dir_(std::move(dir)), dim_(dim) {
    if (dim < 1) {
        throw InvalidInput("descriptor dimension must be positive");
    }
}

FeatureMap FileProvider::dense_features(const QueryImage& image) const {
    Image map = io::read_raster(dense_path(image.name));
    if (map.channels() != dim_) {
        throw InvalidInput("descriptor file " + dense_path(image.name).string() + " has " +
                           std::to_string(map.channels()) + " channels, expected " + std::to_string(dim_));
    }
    if (!image.rgb.empty() && (map.width() != image.rgb.width() || map.height() != image.rgb.height())) {
        throw InvalidInput("descriptor map size does not match image '" + image.name + "'");
    }
    return {std::move(map), 1};
}

KeypointSet FileProvider::sparse_keypoints(const QueryImage& image, std::size_t k) const {
    if (k < 1) {
        throw InvalidInput("keypoint count must be at least 1");
    }
    const auto path = keypoint_path(image.name);
    if (!std::filesystem::exists(path)) {
        return DescriptorProvider::sparse_keypoints(image, k);
    }
    KeypointSet all = read_keypoints(path);
    if (!all.descriptors.empty() && all.dim() != dim_) {
        throw InvalidInput("keypoint file " + path.string() + " has dimension " + std::to_string(all.dim()) +
                           ", expected " + std::to_string(dim_));
    }
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    // Row-major tie-break on the keypoint position.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (all.reliability[a] != all.reliability[b]) return all.reliability[a] > all.reliability[b];
        if (all.pixels[a].y() != all.pixels[b].y()) return all.pixels[a].y() < all.pixels[b].y();
        return all.pixels[a].x() < all.pixels[b].x();
    });
    KeypointSet out;
    out.truncated = order.size() < k;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
        out.pixels.push_back(all.pixels[order[i]]);
        out.descriptors.push_back(all.descriptors[order[i]]);
        out.reliability.push_back(all.reliability[order[i]]);
    }
    return out;
}

void write_keypoints(const std::filesystem::path& path, const KeypointSet& kp) {
    kp.validate();
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out << "# u v reliability d_1 ... d_V\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < kp.size(); ++i) {
        out << kp.pixels[i].x() << ' ' << kp.pixels[i].y() << ' ' << kp.reliability[i];
        for (double d : kp.descriptors[i]) out << ' ' << d;
        out << '\n';
    }
}

KeypointSet read_keypoints(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string(), 0, "cannot open file");
    }
    KeypointSet kp;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double u, v, rel;
        if (!(ls >> u >> v >> rel)) {
            throw ParseError(path.string(), lineno, "expected 'u v reliability d_1 ... d_V'");
        }
        std::vector<double> d;
        double x;
        while (ls >> x) d.push_back(x);
        if (!ls.eof()) {
            throw ParseError(path.string(), lineno, "non-numeric descriptor value");
        }
        if (!kp.descriptors.empty() && static_cast<int>(d.size()) != kp.dim()) {
            throw ParseError(path.string(), lineno, "descriptor dimension changes");
        }
        kp.pixels.emplace_back(u, v);
        kp.reliability.push_back(rel);
        kp.descriptors.emplace_back(Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size())));
    }
    return kp;
}

}  // namespace splatloc
