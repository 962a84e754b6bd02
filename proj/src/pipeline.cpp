#include "splatloc/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "splatloc/errors.hpp"
#include "splatloc/io.hpp"
#include "splatloc/renderer.hpp"

namespace splatloc {

namespace fs = std::filesystem;

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw InvalidInput("bad value '" + v + "' for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidInput("bad value '" + v + "' for " + key + " (expected true or false)");
}

std::string show(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}
std::string show(int v) { return std::to_string(v); }
std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

struct Field {
    const char* key;
    std::function<void(Settings&, const std::string&)> set;
    std::function<std::string(const Settings&)> get;
};

template <class T>
Field number(const char* key, T Settings::*member) {
    return {key, [=](Settings& s, const std::string& v) { s.*member = parse_number<T>(key, v); },
            [=](const Settings& s) { return show(s.*member); }};
}

#define SPLATLOC_FIELD(key, expr, type)                                                        \
    Field {                                                                                    \
        key, [](Settings& s, const std::string& v) { s.expr = parse_number<type>(key, v); }, \
            [](const Settings& s) { return show(s.expr); }                                    \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        number("seed", &Settings::seed),
        number("world.gaussians", &Settings::gaussians),
        number("world.train_views", &Settings::train_views),
        number("world.queries", &Settings::queries),
        number("world.feature_dim", &Settings::feature_dim),
        SPLATLOC_FIELD("world.width", world.width, int),
        SPLATLOC_FIELD("world.height", world.height, int),
        SPLATLOC_FIELD("world.focal", world.focal, double),
        SPLATLOC_FIELD("world.table_size", world.table_size, double),
        SPLATLOC_FIELD("world.boxes", world.boxes, int),
        SPLATLOC_FIELD("world.min_radius", world.min_radius, double),
        SPLATLOC_FIELD("world.max_radius", world.max_radius, double),
        SPLATLOC_FIELD("world.min_coverage", world.min_coverage, double),
        number("teacher.noise", &Settings::teacher_noise),
        number("teacher.stride", &Settings::teacher_stride),
        {"teacher.reliability",
         [](Settings& s, const std::string& v) {
             if (v == "gradient") {
                 s.reliability = ReliabilityMode::gradient;
             } else if (v == "norm") {
                 s.reliability = ReliabilityMode::norm;
             } else {
                 throw InvalidInput("bad value '" + v + "' for teacher.reliability (expected gradient or norm)");
             }
         },
         [](const Settings& s) { return std::string(s.reliability == ReliabilityMode::norm ? "norm" : "gradient"); }},
        SPLATLOC_FIELD("train.iterations", train.iterations, int),
        SPLATLOC_FIELD("train.lambda", train.lambda, double),
        SPLATLOC_FIELD("train.lr_color", train.lr_color, double),
        SPLATLOC_FIELD("train.lr_opacity", train.lr_opacity, double),
        SPLATLOC_FIELD("train.lr_feature", train.lr_feature, double),
        SPLATLOC_FIELD("coarse.keypoints", localize.coarse.keypoints, std::size_t),
        {"coarse.mutual", [](Settings& s, const std::string& v) { s.localize.coarse.matching.mutual = parse_bool("coarse.mutual", v); },
         [](const Settings& s) { return show(s.localize.coarse.matching.mutual); }},
        SPLATLOC_FIELD("ransac.iterations", localize.coarse.ransac.iterations, int),
        SPLATLOC_FIELD("ransac.threshold", localize.coarse.ransac.threshold, double),
        SPLATLOC_FIELD("ransac.early_exit", localize.coarse.ransac.early_exit_ratio, double),
        SPLATLOC_FIELD("refine.iterations", localize.refine.iterations, int),
        SPLATLOC_FIELD("refine.lr", localize.refine.learning_rate, double),
        SPLATLOC_FIELD("refine.rounds", localize.refine.feature_rounds, int),
        SPLATLOC_FIELD("refine.stride", localize.refine.sample_stride, int),
        SPLATLOC_FIELD("refine.tolerance", localize.refine.tolerance, double),
        SPLATLOC_FIELD("refine.feature_keypoints", localize.refine.feature_keypoints, std::size_t),
        SPLATLOC_FIELD("refine.feature_ransac_iterations", localize.refine.feature_ransac.iterations, int),
    };
    return all;
}

#undef SPLATLOC_FIELD

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string name_of(const char* prefix, int i) {
    std::ostringstream s;
    s << prefix << std::setw(3) << std::setfill('0') << i;
    return s.str();
}

std::vector<std::string> read_names(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

void require_file(const fs::path& p, const char* hint) {
    if (!fs::exists(p)) throw Error(p.string() + " not found (" + hint + ")");
}

// Seeds derived from the run seed so stages draw independent streams.
std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::map<std::string, Pose> pose_map(const std::vector<NamedPose>& poses, const fs::path& from) {
    std::map<std::string, Pose> out;
    for (const NamedPose& p : poses) {
        if (!out.emplace(p.name, p.pose).second) throw Error(from.string() + ": duplicate name " + p.name);
    }
    return out;
}

}  // namespace

void Settings::set(const std::string& key, const std::string& value) {
    for (const Field& f : fields()) {
        if (key == f.key) {
            f.set(*this, trim(value));
            return;
        }
    }
    throw InvalidInput("unknown setting '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> Settings::items() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : fields()) out.emplace_back(f.key, f.get(*this));
    return out;
}

void Settings::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open settings file");
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const std::string t = trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError(path.string(), n, "expected key = value");
        try {
            set(trim(t.substr(0, eq)), t.substr(eq + 1));
        } catch (const InvalidInput& e) {
            throw ParseError(path.string(), n, e.what());
        }
    }
}

void Settings::save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    for (const auto& [k, v] : items()) out << k << " = " << v << '\n';
}

SyntheticProviderConfig Settings::provider() const {
    return {teacher_noise, teacher_stride, seed, reliability};
}

void run_synth(const DataDir& dir, const Settings& s, std::ostream& log) {
    fs::create_directories(dir.images());
    fs::create_directories(dir.teacher());
    const SyntheticWorld world = generate_world(s.seed, s.gaussians, s.train_views, s.feature_dim, s.world);
    const std::vector<Pose> queries = sample_cameras(world.scene, world.k, derive(s.seed, 1), s.queries, s.world);
    const SyntheticProvider provider(world.scene, world.k, s.provider());

    s.save(dir.settings());
    write_intrinsics(dir.intrinsics(), world.k);
    write_scene(dir.reference_scene(), world.scene);

    std::vector<NamedPose> train, query;
    for (std::size_t i = 0; i < world.poses.size(); ++i) {
        const std::string name = name_of("train_", static_cast<int>(i));
        const RenderOutput r = render(world.scene, world.poses[i], world.k, Channels::rgb);
        io::write_png(dir.images() / (name + ".png"), r.rgb);
        const FeatureMap f = provider.dense_features({name, r.rgb, world.poses[i]});
        io::write_raster(dir.teacher() / (name + ".fmap"), f.map);
        train.push_back({name, world.poses[i]});
    }
    std::ofstream list(dir.query_list());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const std::string name = name_of("query_", static_cast<int>(i));
        const RenderOutput r = render(world.scene, queries[i], world.k, Channels::rgb);
        io::write_png(dir.images() / (name + ".png"), r.rgb);
        const std::size_t k = std::max(s.localize.coarse.keypoints, s.localize.refine.feature_keypoints);
        write_keypoints(dir.teacher() / (name + ".kp"), provider.sparse_keypoints({name, r.rgb, queries[i]}, k));
        query.push_back({name, queries[i]});
        list << name << '\n';
    }
    write_poses(dir.train_poses(), train);
    write_poses(dir.query_poses(), query);
    log << "synth: " << world.scene.size() << " Gaussians, " << train.size() << " training views, " << query.size()
        << " queries, scene diameter " << scene_diameter(world.scene) << " m -> " << dir.root.string() << '\n';
}

void run_train(const DataDir& dir, const Settings& s, std::ostream& log) {
    require_file(dir.reference_scene(), "run synth first");
    const CameraIntrinsics k = read_intrinsics(dir.intrinsics());
    const Scene reference = read_scene(dir.reference_scene());
    std::vector<TrainView> views;
    for (const NamedPose& p : read_poses(dir.train_poses())) {
        Image rgb = io::read_png(dir.images() / (p.name + ".png"));
        Image teacher = io::read_raster(dir.teacher() / (p.name + ".fmap"));
        views.push_back({std::move(rgb), std::move(teacher), p.pose, k});
    }
    TrainConfig cfg = s.train;
    cfg.seed = s.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = train(reset_attributes(reference), views, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_scene(dir.trained_scene(), r.scene);
    write_loss_history(dir.train_loss(), r.history);
    if (!r.history.empty()) {
        log << "train: " << r.history.size() << " iterations in " << secs << " s, L_GS " << r.history.front().loss.total()
            << " -> " << r.history.back().loss.total() << '\n';
    }
}

void run_localize(const DataDir& dir, const Settings& s, Variant variant, const std::optional<std::string>& only,
                  std::ostream& log) {
    require_file(dir.trained_scene(), "run train first");
    const CameraIntrinsics k = read_intrinsics(dir.intrinsics());
    const Scene scene = read_scene(dir.trained_scene());
    const FileProvider provider(dir.teacher(), scene.feature_dim);
    LocalizeConfig cfg = s.localize;
    cfg.coarse.ransac.seed = s.seed;
    cfg.refine.feature_ransac.seed = s.seed;

    std::vector<std::string> names = read_names(dir.query_list());
    if (only) {
        if (std::find(names.begin(), names.end(), *only) == names.end()) throw InvalidInput("unknown query " + *only);
        names = {*only};
    }
    const fs::path traces = dir.traces(variant);
    fs::create_directories(traces);
    std::vector<NamedPose> estimates;
    for (const std::string& name : names) {
        QueryImage q{name, io::read_png(dir.images() / (name + ".png")), std::nullopt};
        const LocalizeReport rep = localize(q, scene, k, provider, cfg, variant);
        estimates.push_back({name, rep.pose});
        if (rep.warp) write_warp_trace(traces / (name + ".csv"), *rep.warp);
        log << "localize[" << to_string(variant) << "] " << name << ": " << rep.coarse_inliers << '/'
            << rep.correspondences << " coarse inliers";
        if (rep.feature) log << ", " << rep.feature->rounds_run << " feature rounds";
        if (rep.warp) log << ", warp loss " << rep.warp->initial_loss << " -> " << rep.warp->best_loss;
        log << '\n';
        for (const std::string& note : rep.notes) log << "  note: " << note << '\n';
    }
    // A single-query run updates its entry and keeps the others.
    if (only && fs::exists(dir.estimates(variant))) {
        std::vector<NamedPose> merged = read_poses(dir.estimates(variant));
        auto it = std::find_if(merged.begin(), merged.end(), [&](const NamedPose& p) { return p.name == *only; });
        if (it != merged.end()) {
            it->pose = estimates.front().pose;
        } else {
            merged.push_back(estimates.front());
        }
        estimates = std::move(merged);
    }
    write_poses(dir.estimates(variant), estimates);
}

EvalReport run_eval(const fs::path& estimates, const fs::path& ground_truth, std::vector<std::string>* names) {
    const auto est = read_poses(estimates);
    const auto gt = pose_map(read_poses(ground_truth), ground_truth);
    std::vector<Pose> a, b;
    for (const NamedPose& p : est) {
        const auto it = gt.find(p.name);
        if (it == gt.end()) throw InvalidInput("no ground truth for " + p.name + " in " + ground_truth.string());
        a.push_back(p.pose);
        b.push_back(it->second);
        if (names) names->push_back(p.name);
    }
    return evaluate(a, b);
}

void run_report(const DataDir& dir, std::ostream& log) {
    fs::create_directories(dir.report());
    const auto gt = pose_map(read_poses(dir.query_poses()), dir.query_poses());
    std::ofstream summary(dir.report() / "summary.csv");
    summary << "variant,frames,median_translation_cm,median_rotation_deg,pct_10cm_5deg,pct_5cm_5deg,pct_2cm_2deg,"
               "pct_1cm_1deg\n";
    for (const Variant v : {Variant::coarse, Variant::base, Variant::fine}) {
        if (!fs::exists(dir.estimates(v))) continue;
        const EvalReport r = run_eval(dir.estimates(v), dir.query_poses());
        summary << to_string(v) << ',' << r.translation_cm.size() << ',' << r.median_translation_cm << ','
                << r.median_rotation_deg;
        for (const ThresholdBucket& b : r.buckets) summary << ',' << b.percent;
        summary << '\n';
        log << "report: " << to_string(v) << " median " << r.median_translation_cm << " cm / " << r.median_rotation_deg
            << " deg\n";

        // Accuracy against warp iteration, holding each query at its last iterate once its run ends.
        if (!fs::exists(dir.traces(v))) continue;
        std::vector<WarpResult> runs;
        std::vector<Pose> truth;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir.traces(v))) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            const auto it = gt.find(f.stem().string());
            if (f.extension() != ".csv" || it == gt.end()) continue;
            runs.push_back(read_warp_trace(f));
            truth.push_back(it->second);
        }
        if (runs.empty()) continue;
        std::size_t longest = 0;
        for (const WarpResult& r2 : runs) longest = std::max(longest, r2.path.size());
        std::ofstream curve(dir.report() / ("accuracy_vs_iteration_" + to_string(v) + ".csv"));
        curve << "iteration,mean_loss,median_translation_cm,median_rotation_deg,pct_10cm_5deg,pct_5cm_5deg,"
                 "pct_2cm_2deg,pct_1cm_1deg\n";
        for (std::size_t it = 0; it < longest; ++it) {
            std::vector<Pose> at;
            double loss = 0.0;
            for (const WarpResult& r2 : runs) {
                const std::size_t i = std::min(it, r2.path.size() - 1);
                at.push_back(r2.path[i]);
                loss += r2.trace[i];
            }
            const EvalReport e = evaluate(at, truth);
            curve << it << ',' << loss / static_cast<double>(runs.size()) << ',' << e.median_translation_cm << ','
                  << e.median_rotation_deg;
            for (const ThresholdBucket& b : e.buckets) curve << ',' << b.percent;
            curve << '\n';
        }
    }
    log << "report: written to " << dir.report().string() << '\n';
}

}  // namespace splatloc
