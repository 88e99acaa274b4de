#include "ucmt/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "ucmt/config.hpp"
#include "ucmt/data.hpp"
#include "ucmt/errors.hpp"
#include "ucmt/experiment.hpp"
#include "ucmt/metrics.hpp"
#include "ucmt/trainer.hpp"

namespace ucmt::cli {
namespace {

namespace fs = std::filesystem;

// Training flags shared by gen-data, train and sweep. Values stay as text
// until they are applied over the config file.
struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> settings;  // --set key=value
    std::vector<std::pair<std::string, CLI::Option*>> flags;
    std::map<std::string, std::string> values;

    void add(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        flags.emplace_back(key, app->add_option(name, values[key], help));
    }

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "key=value config file; flags override it");
        app->add_option("--set", settings, "extra key=value setting (repeatable)");
        add(app, "--method", "method", "baseline, mt, cps, cmt_v1, cmt_v2, cmt_v3 or ucmt");
        add(app, "--mix", "mix", "none, cutmix or umix");
        add(app, "--ratio", "ratio", "labeled fraction of the training set");
        add(app, "--epochs", "epochs", "training epochs");
        add(app, "--k", "k", "regions swapped per image");
        add(app, "--r", "r", "number of grid regions");
        add(app, "--alpha", "alpha", "teacher EMA decay");
        add(app, "--beta", "beta", "student weighting inside the EMA");
        add(app, "--lambda-max", "lambda_max", "unsupervised weight after ramp-up");
        add(app, "--lr", "lr", "AdamW learning rate");
        add(app, "--seed-init1", "seed_init1", "first student init seed");
        add(app, "--seed-init2", "seed_init2", "second student init seed");
        add(app, "--seed-data", "seed_data", "dataset, split and sampling seed");
        add(app, "--samples", "samples", "training samples to generate");
    }

    [[nodiscard]] TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_file.empty()) cfg = load_config(config_file);
        for (const auto& s : settings) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& [key, opt] : flags) {
            if (opt->count() > 0) apply_setting(cfg, key, values.at(key));
        }
        return cfg;
    }
};

// Refuses a non-empty output directory unless forced. Creates nothing.
void check_output_dir(const fs::path& dir, bool force) {
    if (dir.empty()) throw ConfigError("--out is required");
    if (!fs::exists(dir)) return;
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
        throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
    }
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + path.string());
}

std::vector<std::size_t> parse_sizes(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": bad entry '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

trainer::TrainingData load_training_data(const fs::path& dir, TrainConfig& cfg) {
    data::LoadedDataset loaded = data::load_dataset(dir);
    trainer::TrainingData d;
    for (auto& s : loaded.samples) {
        if (s.mask) {
            d.split.labeled.push_back(std::move(s));
        } else {
            d.split.unlabeled.push_back(std::move(s));
        }
    }
    d.split.label_ratio = loaded.manifest.label_ratio;
    d.split.seed = loaded.manifest.seed;
    cfg.label_ratio = loaded.manifest.label_ratio;
    cfg.samples = loaded.manifest.total;
    validate(cfg);
    d.validation = trainer::make_validation(cfg);
    return d;
}

int cmd_gen_data(const ConfigFlags& flags, const fs::path& out_dir, bool force, std::optional<std::uint64_t> seed,
                 std::ostream& out) {
    TrainConfig cfg = flags.resolve();
    if (seed) cfg.seed_data = *seed;
    validate(cfg);
    check_output_dir(out_dir, force);
    const trainer::TrainingData d = trainer::make_training_data(cfg);
    make_dir(out_dir);
    const data::Manifest m = data::save_dataset(d.split, out_dir);
    write_text(out_dir / "config.txt", to_text(cfg));
    out << "dataset " << out_dir.string() << ": M=" << m.total << " samples, N=" << m.labeled << " labeled, "
        << (m.total - m.labeled) << " unlabeled (ratio " << m.label_ratio << ", seed " << m.seed << ")\n";
    return kOk;
}

int cmd_train(const ConfigFlags& flags, const fs::path& out_dir, bool force, const std::string& data_dir,
              std::ostream& out, std::ostream& err) {
    TrainConfig cfg = flags.resolve();
    validate(cfg);
    if (!data_dir.empty() && !fs::exists(fs::path(data_dir) / "manifest.tsv")) {
        throw IoError("no dataset manifest under " + data_dir);
    }
    check_output_dir(out_dir, force);
    const trainer::TrainingData d =
        data_dir.empty() ? trainer::make_training_data(cfg) : load_training_data(data_dir, cfg);
    make_dir(out_dir);
    write_text(out_dir / "config.txt", to_text(cfg));

    const trainer::TrainResult result = trainer::run_training(cfg, d);
    {
        std::ofstream f(out_dir / "history.csv", std::ios::binary);
        trainer::write_history_csv(f, result.history);
        if (!f) throw IoError("cannot write " + (out_dir / "history.csv").string());
    }
    trainer::save_triad(result.state, cfg, out_dir / "checkpoint");
    if (result.diverged) {
        err << "training diverged: " << result.error << " (" << result.history.size()
            << " iterations kept in history.csv)\n";
        return kDivergence;
    }
    const double dsc = trainer::teacher_dsc(result.state.teacher, d.validation, cfg.generator.classes);
    out << "trained " << to_string(cfg.method) << " (mix " << to_string(cfg.effective_mix()) << ") for "
        << result.history.size() << " iterations; teacher DSC " << dsc << '\n';
    return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& config_file, const std::vector<std::string>& settings,
             const std::string& out_arg, std::ostream& out) {
    fs::path given = fs::path(ckpt).lexically_normal();
    if (!given.has_filename()) given = given.parent_path();
    // Accept either the train output directory or its checkpoint/ subdirectory.
    fs::path run_dir = given, ckpt_dir = given;
    if (fs::exists(given / "checkpoint" / "triad.manifest")) {
        ckpt_dir = given / "checkpoint";
    } else if (!fs::exists(given / "config.txt") && fs::exists(given.parent_path() / "config.txt")) {
        run_dir = given.parent_path();
    }
    TrainConfig cfg;
    if (!config_file.empty()) {
        cfg = load_config(config_file);
    } else if (fs::exists(run_dir / "config.txt")) {
        cfg = load_config((run_dir / "config.txt").string());
    }
    for (const auto& s : settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    const fs::path out_dir = out_arg.empty() ? run_dir : fs::path(out_arg);
    const trainer::TriadState state = trainer::load_triad(ckpt_dir);
    if (state.teacher.spec.classes() != cfg.generator.classes) {
        throw ConfigError("checkpoint predicts " + std::to_string(state.teacher.spec.classes()) +
                          " classes but the config has " + std::to_string(cfg.generator.classes));
    }
    const auto records = trainer::evaluate(state.teacher, trainer::make_validation(cfg), cfg.generator.classes);
    make_dir(out_dir);
    std::ostringstream csv;
    metrics::write_metrics_csv(csv, records);
    write_text(out_dir / "metrics.csv", csv.str());
    const metrics::Aggregate a = metrics::aggregate(records);
    out << "teacher on " << a.count << " held-out samples: dsc " << a.dsc << ", jaccard " << a.jaccard << ", hd95 "
        << a.hd95 << ", asd " << a.asd;
    if (a.infinite > 0) out << " (" << a.infinite << " samples with an empty side excluded from hd95/asd)";
    out << '\n';
    return kOk;
}

int cmd_sweep(const ConfigFlags& flags, const fs::path& out_dir, bool force, const std::string& ks,
              const std::string& rs, const std::string& reps, std::ostream& out) {
    experiment::SweepSpec spec;
    spec.base = flags.resolve();
    spec.ks = parse_sizes(ks, "--ks");
    spec.rs = parse_sizes(rs, "--rs");
    if (!reps.empty()) {
        for (std::size_t r : parse_sizes(reps, "--replicates")) spec.replicates.push_back(r);
    }
    if (spec.base.effective_mix() != Mix::umix) throw ConfigError("sweep varies k and r, so it needs mix=umix");
    for (std::size_t r : spec.rs) {
        TrainConfig probe = spec.base;
        probe.r = r;
        probe.k = 1;
        validate(probe);
        mixer::partition(probe.generator.height, probe.generator.width, r);
    }
    check_output_dir(out_dir, force);
    make_dir(out_dir);
    write_text(out_dir / "config.txt", to_text(spec.base));
    std::ofstream table(out_dir / "table.csv", std::ios::binary);
    if (!table) throw IoError("cannot write " + (out_dir / "table.csv").string());
    const auto cells = experiment::run_sweep(spec, &table);
    std::ostringstream matrix;
    experiment::write_sweep_matrix(matrix, spec, cells);
    write_text(out_dir / "matrix.csv", matrix.str());
    out << matrix.str();
    return kOk;
}

std::string label_for(const fs::path& history) {
    const fs::path cfg = history.parent_path() / "config.txt";
    if (fs::exists(cfg)) {
        try {
            return std::string(to_string(load_config(cfg.string()).method));
        } catch (const std::exception&) {
        }
    }
    const std::string parent = history.parent_path().filename().string();
    return parent.empty() ? history.stem().string() : parent;
}

int cmd_report(const std::vector<std::string>& positional, const std::vector<std::string>& labeled,
               const fs::path& out_dir, bool no_charts, std::ostream& out, std::ostream& err) {
    std::vector<std::pair<std::string, fs::path>> sources;
    for (const auto& s : labeled) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--input expects label=path, got '" + s + "'");
        sources.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& p : positional) {
        fs::path path(p);
        if (fs::is_directory(path)) path /= "history.csv";
        sources.emplace_back(label_for(path), path);
    }
    if (sources.empty()) throw ConfigError("report needs at least one history.csv");
    if (out_dir.empty()) throw ConfigError("--out is required");

    std::vector<experiment::CurveInput> inputs;
    for (auto& [label, path] : sources) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read " + path.string());
        inputs.push_back({label, trainer::read_history_csv(f)});
    }
    const experiment::CurveSet curves = experiment::merge_curves(inputs);
    for (const auto& w : curves.warnings) err << "warning: " << w << '\n';
    make_dir(out_dir);
    std::ostringstream csv;
    experiment::write_curves_csv(csv, curves);
    write_text(out_dir / "curves.csv", csv.str());
    if (!no_charts) {
        for (const auto& series : experiment::curve_series()) {
            write_text(out_dir / (series + ".svg"), experiment::render_svg(curves, series));
        }
    }
    out << "report: " << curves.methods.size() << " methods x " << experiment::curve_series().size()
        << " series -> " << (out_dir / "curves.csv").string() << '\n';
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised segmentation with a collaborative mean teacher and uncertainty-guided mixing"};
    app.name("ucmt");
    app.require_subcommand(1);

    std::string out_dir;
    bool force = false;

    ConfigFlags gen_flags;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate and save a synthetic labeled/unlabeled dataset");
    gen_flags.attach(gen);
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "alias for --seed-data");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_flag("--force", force, "write into a non-empty directory");

    ConfigFlags train_flags;
    std::string data_dir;
    auto* train = app.add_subcommand("train", "Train one method and write history.csv plus a checkpoint");
    train_flags.attach(train);
    train->add_option("--data", data_dir, "dataset directory from gen-data (default: generate in memory)");
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_flag("--force", force, "write into a non-empty directory");

    std::string ckpt, eval_config;
    std::vector<std::string> eval_settings;
    auto* eval = app.add_subcommand("eval", "Evaluate a trained teacher on the held-out set");
    eval->add_option("--ckpt", ckpt, "train output directory or checkpoint directory")->required();
    eval->add_option("--config", eval_config, "config file (default: config.txt next to the checkpoint)");
    eval->add_option("--set", eval_settings, "extra key=value setting (repeatable)");
    eval->add_option("--out", out_dir, "directory for metrics.csv (default: the checkpoint's run directory)");
    eval->add_flag("--force", force, "accepted for symmetry; metrics.csv is always rewritten");

    ConfigFlags sweep_flags;
    std::string ks = "1,2,3,4,5", rs = "16,4,8", reps;
    auto* sweep = app.add_subcommand("sweep", "Grid over k and r; mean teacher DSC per cell");
    sweep_flags.attach(sweep);
    sweep->add_option("--ks", ks, "comma-separated k values")->capture_default_str();
    sweep->add_option("--rs", rs, "comma-separated r values")->capture_default_str();
    sweep->add_option("--replicates", reps, "comma-separated replicate seeds (default: the configured seeds)");
    sweep->add_option("--out", out_dir, "output directory")->required();
    sweep->add_flag("--force", force, "write into a non-empty directory");

    std::vector<std::string> histories, inputs;
    bool no_charts = false;
    auto* report = app.add_subcommand("report", "Merge histories into curves.csv and SVG charts");
    report->add_option("histories", histories, "history.csv files or run directories");
    report->add_option("--input", inputs, "label=path/to/history.csv (repeatable)");
    report->add_option("--out", out_dir, "output directory")->required();
    report->add_flag("--no-charts", no_charts, "skip the SVG charts");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "ucmt: " << e.what() << "\nrun 'ucmt --help' for usage\n";
        return kUsage;
    }

    try {
        if (gen->parsed()) {
            std::optional<std::uint64_t> seed;
            if (gen_seed_opt->count() > 0) seed = gen_seed;
            return cmd_gen_data(gen_flags, out_dir, force, seed, out);
        }
        if (train->parsed()) return cmd_train(train_flags, out_dir, force, data_dir, out, err);
        if (eval->parsed()) return cmd_eval(ckpt, eval_config, eval_settings, out_dir, out);
        if (sweep->parsed()) return cmd_sweep(sweep_flags, out_dir, force, ks, rs, reps, out);
        if (report->parsed()) return cmd_report(histories, inputs, out_dir, no_charts, out, err);
    } catch (const DivergenceError& e) {
        err << "ucmt: " << e.what() << '\n';
        return kDivergence;
    } catch (const IoError& e) {
        err << "ucmt: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "ucmt: " << e.what() << '\n';
        return kIo;
    } catch (const std::invalid_argument& e) {
        err << "ucmt: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "ucmt: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace ucmt::cli
