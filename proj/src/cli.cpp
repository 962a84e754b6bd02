#include "splatloc/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "splatloc/errors.hpp"
#include "splatloc/pipeline.hpp"

namespace splatloc {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

// Precedence: built-in defaults, then `base` (a data directory's settings), then --config,
// then --set, then --seed.
Settings resolve(const Globals& g, const std::optional<fs::path>& base = std::nullopt) {
    Settings s;
    if (base && fs::exists(*base)) s.load(*base);
    if (!g.config.empty()) s.load(g.config);
    for (const std::string& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + kv + "'");
        s.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) s.seed = *g.seed;
    return s;
}

std::vector<Variant> variants(const std::vector<std::string>& names) {
    if (names.empty()) return {Variant::coarse, Variant::base, Variant::fine};
    std::vector<Variant> out;
    for (const std::string& n : names) out.push_back(parse_variant(n));
    return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pose estimation against a distilled Gaussian splatting scene", "splatloc"};
    app.require_subcommand(1);

    Globals g;
    app.add_option("--config", g.config, "Settings file (key = value lines)")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "Override one setting, key=value (repeatable)");
    app.add_option("--seed", g.seed, "Seed for every random stream");

    std::string dir, estimates, gt, report_out, query;
    std::vector<std::string> variant_names;

    auto* synth = app.add_subcommand("synth", "Generate a world, training renders, queries and teacher descriptors");
    synth->add_option("--out", dir, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Distill appearance and features into the reference geometry");
    train->add_option("--data", dir, "Directory written by synth")->required()->check(CLI::ExistingDirectory);

    auto* loc = app.add_subcommand("localize", "Localize queries against the trained scene");
    loc->add_option("--data", dir, "Directory written by synth and train")->required()->check(CLI::ExistingDirectory);
    loc->add_option("--variant", variant_names, "coarse, base or fine (repeatable; default all three)")
        ->check(CLI::IsMember({"coarse", "base", "fine"}));
    loc->add_option("--query", query, "Localize a single named query");

    auto* eval = app.add_subcommand("eval", "Compare an estimate file with ground truth");
    eval->add_option("--estimates", estimates, "Estimated poses")->required()->check(CLI::ExistingFile);
    eval->add_option("--gt", gt, "Ground-truth poses")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", report_out, "Also write the report to this file");

    auto* report = app.add_subcommand("report", "Summary and accuracy-versus-iteration CSVs");
    report->add_option("--data", dir, "Pipeline directory")->required()->check(CLI::ExistingDirectory);

    auto* run = app.add_subcommand("run", "synth, train, localize (all variants) and report in one go");
    run->add_option("--out", dir, "Output directory")->required();

    auto* config = app.add_subcommand("config", "Print the resolved settings");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (synth->parsed() || run->parsed()) {
            const Settings s = resolve(g);
            const DataDir d{dir};
            run_synth(d, s, out);
            if (run->parsed()) {
                run_train(d, s, out);
                for (const Variant v : variants({})) run_localize(d, s, v, std::nullopt, out);
                run_report(d, out);
            }
        } else if (train->parsed()) {
            const DataDir d{dir};
            run_train(d, resolve(g, d.settings()), out);
        } else if (loc->parsed()) {
            const DataDir d{dir};
            const Settings s = resolve(g, d.settings());
            const std::optional<std::string> only = query.empty() ? std::nullopt : std::optional(query);
            for (const Variant v : variants(variant_names)) run_localize(d, s, v, only, out);
        } else if (eval->parsed()) {
            std::vector<std::string> names;
            const EvalReport r = run_eval(estimates, gt, &names);
            write_report(out, r, names);
            if (!report_out.empty()) {
                std::ofstream f(report_out);
                if (!f) throw Error("cannot open " + report_out + " for writing");
                write_report(f, r, names);
            }
        } else if (report->parsed()) {
            run_report(DataDir{dir}, out);
        } else if (config->parsed()) {
            for (const auto& [k, v] : resolve(g).items()) out << k << " = " << v << '\n';
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace splatloc
