#include "splatloc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "splatloc/errors.hpp"

namespace splatloc {

void Scene::validate() const {
    if (feature_dim < 0) {
        throw InvalidInput("feature dimension must be non-negative");
    }
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian& g = gaussians[i];
        const std::string where = "gaussian " + std::to_string(i) + ": ";
        if (g.feature.size() != feature_dim) {
            throw InvalidInput(where + "feature length " + std::to_string(g.feature.size()) +
                               " does not match scene dimension " + std::to_string(feature_dim));
        }
        if (!(g.scale.array() > 0.0).all()) {
            throw InvalidInput(where + "scale components must be positive");
        }
        if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
            throw InvalidInput(where + "opacity outside [0,1]");
        }
        if (!(g.color.array() >= 0.0).all() || !(g.color.array() <= 1.0).all()) {
            throw InvalidInput(where + "color outside [0,1]");
        }
        if (!(g.rotation.norm() > 0.0)) {
            throw InvalidInput(where + "zero rotation quaternion");
        }
    }
}

void Scene::clamp_attributes() {
    for (Gaussian& g : gaussians) {
        g.opacity = std::clamp(g.opacity, 0.0, 1.0);
        g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
    }
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
    scene.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out.write(kSceneMagic, 4);
    detail::put_u32(out, kSceneVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(scene.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(scene.feature_dim));
    for (int i = 0; i < 3; ++i) detail::put_f32(out, scene.background[i]);
    for (const Gaussian& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) detail::put_f32(out, g.position[i]);
        for (double q : {g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z}) detail::put_f32(out, q);
        for (int i = 0; i < 3; ++i) detail::put_f32(out, g.scale[i]);
        detail::put_f32(out, g.opacity);
        for (int i = 0; i < 3; ++i) detail::put_f32(out, g.color[i]);
        for (int i = 0; i < scene.feature_dim; ++i) detail::put_f32(out, g.feature[i]);
    }
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

Scene read_scene(const std::filesystem::path& path) {
    const std::string name = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(name, 0, "cannot open file");
    }
    detail::expect_magic(in, kSceneMagic, name);
    if (detail::get_u32(in, name) != kSceneVersion) {
        throw ParseError(name, 0, "unsupported scene version");
    }
    const auto n = detail::get_u32(in, name);
    const auto v = detail::get_u32(in, name);
    if (v > 1u << 12) {
        throw ParseError(name, 0, "implausible feature dimension");
    }
    Scene scene;
    scene.feature_dim = static_cast<int>(v);
    for (int i = 0; i < 3; ++i) scene.background[i] = detail::get_f32(in, name);
    scene.gaussians.reserve(std::min<std::uint32_t>(n, 1u << 20));
    for (std::uint32_t k = 0; k < n; ++k) {
        Gaussian g;
        for (int i = 0; i < 3; ++i) g.position[i] = detail::get_f32(in, name);
        g.rotation.w = detail::get_f32(in, name);
        g.rotation.x = detail::get_f32(in, name);
        g.rotation.y = detail::get_f32(in, name);
        g.rotation.z = detail::get_f32(in, name);
        for (int i = 0; i < 3; ++i) g.scale[i] = detail::get_f32(in, name);
        g.opacity = detail::get_f32(in, name);
        for (int i = 0; i < 3; ++i) g.color[i] = detail::get_f32(in, name);
        g.feature.resize(scene.feature_dim);
        for (int i = 0; i < scene.feature_dim; ++i) g.feature[i] = detail::get_f32(in, name);
        scene.gaussians.push_back(std::move(g));
    }
    try {
        scene.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(name, 0, e.what());
    }
    return scene;
}

}  // namespace splatloc
