// xferlab command-line runner.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad config or arguments,
// 3 training diverged, 4 I/O or dataset failure, 5 output directory not
// empty (pass --force).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "xferlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace xferlab;

namespace {

enum Exit { ok = 0, failure = 1, config = 2, divergence = 3, io = 4, not_empty = 5 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string out;
    bool force = false;
};

struct GenFlags {
    std::optional<std::size_t> source_classes, target_classes, source_per_class, target_per_class, image_size;
};

struct LrFlags {
    std::optional<double> lo, hi;
    std::optional<std::size_t> iters;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
    auto* opt = cmd->add_option("--config", c.config, "experiment config (INI)");
    if (config_required) opt->required();
    cmd->add_option("--seed", c.seed, "override experiment.seed");
    cmd->add_option("--jobs", c.jobs, "folds trained in parallel")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, "output directory (overrides experiment.out)");
    cmd->add_flag("--force", c.force, "write into a non-empty output directory");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.jobs) cfg.jobs = *c.jobs;
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

bool occupied(const fs::path& dir) {
    std::error_code ec;
    return fs::exists(dir, ec) && (!fs::is_directory(dir, ec) || !fs::is_empty(dir, ec));
}

int run_command(const std::string& name, const Common& common, const GenFlags& gen, const LrFlags& lr) {
    ExperimentConfig cfg = resolve(common);
    if (name == "gen") {
        if (gen.source_classes) cfg.dataset.source_classes = *gen.source_classes;
        if (gen.target_classes) cfg.dataset.target_classes = *gen.target_classes;
        if (gen.source_per_class) cfg.dataset.source_per_class = *gen.source_per_class;
        if (gen.target_per_class) cfg.dataset.target_per_class = *gen.target_per_class;
        if (gen.image_size) cfg.dataset.shape = {1, *gen.image_size, *gen.image_size};
    }
    if (name == "lrfind") {
        if (lr.lo) cfg.lrfind.lr_lo = *lr.lo;
        if (lr.hi) cfg.lrfind.lr_hi = *lr.hi;
        if (lr.iters) cfg.lrfind.num_iters = *lr.iters;
        validate(cfg.lrfind);
    }
    const fs::path out = cfg.out;
    if (occupied(out) && !common.force) {
        std::cerr << "xferlab: output directory " << out.string() << " is not empty (use --force)\n";
        return not_empty;
    }

    Artifacts files;
    if (name == "run") files = run_experiment(cfg, true);
    else if (name == "baseline") files = run_experiment(cfg, false);
    else if (name == "lrfind") files = run_lrfind(cfg);
    else files = generate_corpus(cfg);

    if (name == "gen") {
        // stale classes from an earlier corpus would change what loads back
        std::error_code ec;
        fs::remove_all(out / "source", ec);
        fs::remove_all(out / "target", ec);
    }
    write_artifacts(files, out);
    if (name == "lrfind") {
        std::cout << "suggested lr " << Json::parse(files.at("lrfind.json"))["suggested_lr"].get<double>() << "\n";
    } else if (name != "gen") {
        const auto summary = Json::parse(files.at("summary.json"));
        if (summary.contains("comparison")) {
            std::cout << "stage 3 accuracy " << summary["comparison"]["protocol_accuracy"].get<double>()
                      << ", baseline " << summary["comparison"]["baseline_accuracy"].get<double>() << "\n";
        } else if (summary.contains("aggregate")) {
            std::cout << "stage 3 accuracy " << summary["aggregate"]["stage_3"]["accuracy"]["mean"].get<double>() << "\n";
        } else {
            std::cout << "baseline accuracy " << summary["baseline"]["aggregate"]["accuracy"]["mean"].get<double>() << "\n";
        }
    }
    std::cout << "wrote " << files.size() << " files to " << out.string() << "\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xferlab: staged transfer-learning experiments"};
    app.require_subcommand(1);
    Common common;
    GenFlags gen;
    LrFlags lr;

    auto* run = app.add_subcommand("run", "pretrain on the source, then stages I-III on every target fold");
    add_common(run, common, true);
    auto* base = app.add_subcommand("baseline", "train the from-scratch control on every target fold");
    add_common(base, common, true);
    auto* lrfind = app.add_subcommand("lrfind", "LR range test for the head of the pretrained model");
    add_common(lrfind, common, true);
    lrfind->add_option("--lr-lo", lr.lo, "lowest swept rate");
    lrfind->add_option("--lr-hi", lr.hi, "highest swept rate");
    lrfind->add_option("--iters", lr.iters, "sweep length");
    auto* g = app.add_subcommand("gen", "write the synthetic corpus as PGM class directories");
    add_common(g, common, false);
    g->add_option("--source-classes", gen.source_classes);
    g->add_option("--target-classes", gen.target_classes);
    g->add_option("--source-per-class", gen.source_per_class);
    g->add_option("--target-per-class", gen.target_per_class);
    g->add_option("--image-size", gen.image_size);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : Exit::config;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return run_command(name, common, gen, lr);
    } catch (const ConfigError& e) {
        std::cerr << "xferlab: config error: " << e.what() << "\n";
        return Exit::config;
    } catch (const DivergenceError& e) {
        std::cerr << "xferlab: training diverged: " << e.what() << "\n";
        return divergence;
    } catch (const IoError& e) {
        std::cerr << "xferlab: I/O error: " << e.what() << "\n";
        return io;
    } catch (const DataError& e) {
        std::cerr << "xferlab: dataset error: " << e.what() << "\n";
        return io;
    } catch (const DimensionError& e) {
        std::cerr << "xferlab: dataset error: " << e.what() << "\n";
        return io;
    } catch (const std::exception& e) {
        std::cerr << "xferlab: " << e.what() << "\n";
        return failure;
    }
}
