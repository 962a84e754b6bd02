#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "splatloc/descriptors.hpp"
#include "splatloc/distill.hpp"
#include "splatloc/harness.hpp"
#include "splatloc/refinement.hpp"

namespace splatloc {

/// Everything a pipeline run depends on. Read from `key = value` files; see README for the keys.
struct Settings {
    std::uint64_t seed = 1;
    int gaussians = 500;
    int train_views = 20;
    int queries = 20;
    int feature_dim = 16;
    WorldConfig world;
    double teacher_noise = 0.01;
    int teacher_stride = 8;
    ReliabilityMode reliability = ReliabilityMode::norm;
    TrainConfig train{.iterations = 3000};
    LocalizeConfig localize;

    /// Throws InvalidInput for an unknown key or an unparsable value.
    void set(const std::string& key, const std::string& value);
    /// All keys with their current values, in documentation order.
    std::vector<std::pair<std::string, std::string>> items() const;

    /// Applies a settings file on top of the current values. Throws ParseError.
    void load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    SyntheticProviderConfig provider() const;
};

/// Layout of a pipeline directory.
struct DataDir {
    std::filesystem::path root;

    std::filesystem::path settings() const { return root / "settings.txt"; }
    std::filesystem::path intrinsics() const { return root / "intrinsics.txt"; }
    std::filesystem::path reference_scene() const { return root / "scene_gt.spls"; }
    std::filesystem::path trained_scene() const { return root / "scene.spls"; }
    std::filesystem::path train_poses() const { return root / "train_poses.txt"; }
    std::filesystem::path query_poses() const { return root / "query_poses.txt"; }
    std::filesystem::path query_list() const { return root / "queries.txt"; }
    std::filesystem::path images() const { return root / "images"; }
    std::filesystem::path teacher() const { return root / "teacher"; }
    std::filesystem::path train_loss() const { return root / "train_loss.csv"; }
    std::filesystem::path estimates(Variant v) const { return root / ("estimates_" + to_string(v) + ".txt"); }
    std::filesystem::path traces(Variant v) const { return root / "traces" / to_string(v); }
    std::filesystem::path report() const { return root / "report"; }
};

/// Generates the world, held-out queries, PNG renders and teacher descriptors.
void run_synth(const DataDir& dir, const Settings& settings, std::ostream& log);

/// Distills the reference geometry against the training renders and teacher maps.
void run_train(const DataDir& dir, const Settings& settings, std::ostream& log);

/// Localizes every query (or just `only`) and writes estimates and warp traces.
void run_localize(const DataDir& dir, const Settings& settings, Variant variant,
                  const std::optional<std::string>& only, std::ostream& log);

/// Pairs estimates with ground truth by name; every estimate needs a ground-truth entry.
EvalReport run_eval(const std::filesystem::path& estimates, const std::filesystem::path& ground_truth,
                    std::vector<std::string>* names = nullptr);

/// Summary CSV over variants and accuracy-versus-iteration CSVs from the warp traces.
void run_report(const DataDir& dir, std::ostream& log);

}  // namespace splatloc
