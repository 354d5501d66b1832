#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "xferlab/augment.hpp"
#include "xferlab/error.hpp"
#include "xferlab/io.hpp"
#include "xferlab/lr_finder.hpp"
#include "xferlab/model.hpp"
#include "xferlab/protocol.hpp"

namespace xferlab {

struct DatasetConfig {
    enum class Kind { synthetic, directory };
    Kind kind = Kind::synthetic;
    std::string source_dir;
    std::string target_dir;
    std::size_t source_classes = 6;
    std::size_t target_classes = 4;
    std::size_t source_per_class = 200;
    std::size_t target_per_class = 40;
    InputShape shape{1, 16, 16};
};

struct BaselineConfig {
    bool enabled = true;
    double lr = 2e-3;
    std::size_t epochs = 0;  // 0 means the protocol's total stage epochs
    CosineSettings cosine{true, 0, 1, 0.05};  // cycle_epochs 0 means one cycle over all epochs
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/default";
    std::size_t jobs = 1;
    DatasetConfig dataset;
    std::size_t width = 8;
    PretrainConfig pretrain;
    std::size_t folds = 5;
    TrainingOptions training;
    std::array<StageConfig, 3> stages{StageConfig{StageId::I, 8, FixedLr{1e-3}, std::nullopt, {}},
                                      StageConfig{StageId::II, 6, OlrfLr{}, std::nullopt, {true, 1, 1, 0.01}},
                                      StageConfig{StageId::III, 4, SliceLr{}, std::nullopt, {true, 1, 1, 0.01}}};
    AugmentPolicy augment{0.5, 0.0, 10.0, 1.1, 0.1, 0};
    LrFinderConfig lrfind{1e-7, 10.0, 100, 0.98, 4.0};
    BaselineConfig baseline;

    std::size_t total_stage_epochs() const { return stages[0].epochs + stages[1].epochs + stages[2].epochs; }
    std::size_t baseline_epochs() const { return baseline.epochs ? baseline.epochs : total_stage_epochs(); }
};

namespace detail {

/// Key -> 1-based line number, for diagnostics on values that parse but fail
/// validation.
inline std::map<std::string, std::size_t> ini_key_lines(const std::string& text) {
    std::map<std::string, std::size_t> lines;
    std::istringstream in(text);
    std::string line, section;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == ';' || line[first] == '#') continue;
        if (line[first] == '[') {
            const auto close = line.find(']', first);
            section = line.substr(first + 1, close == std::string::npos ? std::string::npos : close - first - 1);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto key = line.substr(first, eq - first);
        key.erase(key.find_last_not_of(" \t") + 1);
        lines.emplace(section + "." + key, n);
    }
    return lines;
}

class ConfigReader {
public:
    ConfigReader(const boost::property_tree::ptree& tree, std::map<std::string, std::size_t> lines, std::string source)
        : tree_(tree), lines_(std::move(lines)), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        const auto it = lines_.find(key);
        throw ConfigError(source_ + (it != lines_.end() ? ":" + std::to_string(it->second) : std::string()) + ": " + key +
                          ": " + msg);
    }

    bool has(const std::string& key) const { return tree_.get_child_optional(path(key)).has_value(); }

    std::string raw(const std::string& key) const {
        used_.insert(key);
        return tree_.get<std::string>(path(key));
    }

    std::string get(const std::string& key, const std::string& fallback) const { return has(key) ? raw(key) : fallback; }

    double get(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const std::string s = raw(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail(key, "expected a number, got '" + s + "'");
        }
    }

    std::size_t get(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const std::string s = raw(key);
        try {
            std::size_t pos = 0;
            if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
            const unsigned long long v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            fail(key, "expected a non-negative integer, got '" + s + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string s = raw(key);
        if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
        if (s == "false" || s == "no" || s == "off" || s == "0") return false;
        fail(key, "expected true or false, got '" + s + "'");
    }

    /// Rejects every key the parser never read.
    void reject_unknown() const {
        for (const auto& [section, body] : tree_) {
            if (body.empty() && !body.data().empty()) fail(section, "keys must live inside a [section]");
            for (const auto& [key, value] : body) {
                const std::string full = section + "." + key;
                if (!used_.count(full)) fail(full, "unknown key");
            }
        }
    }

private:
    static boost::property_tree::ptree::path_type path(const std::string& key) {
        return boost::property_tree::ptree::path_type(key, '.');
    }

    const boost::property_tree::ptree& tree_;
    std::map<std::string, std::size_t> lines_;
    std::string source_;
    mutable std::set<std::string> used_;
};

inline StageConfig read_stage(const ConfigReader& r, StageConfig s, const AugmentPolicy& augment) {
    const std::string sec = "stage" + std::to_string(stage_number(s.stage)) + ".";
    s.epochs = r.get(sec + "epochs", s.epochs);
    const std::string kind_default = std::holds_alternative<FixedLr>(s.lr) ? "fixed"
                                     : std::holds_alternative<OlrfLr>(s.lr) ? "olrf"
                                                                            : "slice";
    const std::string kind = r.get(sec + "lr_policy", kind_default);
    if (kind == "fixed") {
        const double fallback = std::holds_alternative<FixedLr>(s.lr) ? std::get<FixedLr>(s.lr).lr : 1e-3;
        s.lr = FixedLr{r.get(sec + "lr", fallback)};
    } else if (kind == "olrf") {
        OlrfLr o = std::holds_alternative<OlrfLr>(s.lr) ? std::get<OlrfLr>(s.lr) : OlrfLr{};
        o.lo = r.get(sec + "lr_lo", o.lo);
        o.hi = r.get(sec + "lr_hi", o.hi);
        o.iters = r.get(sec + "lrfind_iters", o.iters);
        o.smoothing = r.get(sec + "lrfind_smoothing", o.smoothing);
        s.lr = o;
    } else if (kind == "slice") {
        SliceLr sl = std::holds_alternative<SliceLr>(s.lr) ? std::get<SliceLr>(s.lr) : SliceLr{};
        sl.lo = r.get(sec + "lr_lo", sl.lo);
        sl.hi = r.get(sec + "lr_hi", sl.hi);
        s.lr = sl;
    } else {
        r.fail(sec + "lr_policy", "expected fixed, olrf or slice, got '" + kind + "'");
    }
    const bool aug = r.get_bool(sec + "augment", s.augment.has_value());
    s.augment = aug ? std::optional<AugmentPolicy>(augment) : std::nullopt;
    s.cosine.enabled = r.get_bool(sec + "cosine", s.cosine.enabled);
    s.cosine.cycle_epochs = r.get(sec + "cycle_epochs", s.cosine.cycle_epochs);
    s.cosine.cycle_mult = r.get(sec + "cycle_mult", s.cosine.cycle_mult);
    s.cosine.min_ratio = r.get(sec + "min_ratio", s.cosine.min_ratio);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        r.fail(sec.substr(0, sec.size() - 1), e.what());
    }
    return s;
}

}  // namespace detail

/// Parses an INI experiment description. `source` names the input in
/// diagnostics, which carry the line number of the offending key.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    const detail::ConfigReader r(tree, detail::ini_key_lines(text), source);
    ExperimentConfig c;

    c.seed = r.get("experiment.seed", std::size_t{0});
    c.out = r.get("experiment.out", c.out);
    c.jobs = r.get("experiment.jobs", c.jobs);
    if (c.jobs < 1) r.fail("experiment.jobs", "must be at least 1");

    const std::string kind = r.get("dataset.kind", std::string("synthetic"));
    if (kind == "synthetic") {
        c.dataset.kind = DatasetConfig::Kind::synthetic;
    } else if (kind == "directory") {
        c.dataset.kind = DatasetConfig::Kind::directory;
    } else {
        r.fail("dataset.kind", "expected synthetic or directory, got '" + kind + "'");
    }
    c.dataset.source_dir = r.get("dataset.source_dir", c.dataset.source_dir);
    c.dataset.target_dir = r.get("dataset.target_dir", c.dataset.target_dir);
    c.dataset.source_classes = r.get("dataset.source_classes", c.dataset.source_classes);
    c.dataset.target_classes = r.get("dataset.target_classes", c.dataset.target_classes);
    c.dataset.source_per_class = r.get("dataset.source_per_class", c.dataset.source_per_class);
    c.dataset.target_per_class = r.get("dataset.target_per_class", c.dataset.target_per_class);
    const std::size_t size = r.get("dataset.image_size", c.dataset.shape.height);
    c.dataset.shape = {r.get("dataset.channels", std::size_t{1}), size, size};
    c.training.standardize = r.get_bool("dataset.standardize", c.training.standardize);
    if (c.dataset.kind == DatasetConfig::Kind::directory && (c.dataset.source_dir.empty() || c.dataset.target_dir.empty()))
        r.fail("dataset.kind", "directory datasets need source_dir and target_dir");
    if (c.dataset.kind == DatasetConfig::Kind::synthetic) {
        if (c.dataset.source_classes < 2) r.fail("dataset.source_classes", "must be at least 2");
        if (c.dataset.target_classes < 2) r.fail("dataset.target_classes", "must be at least 2");
        if (c.dataset.source_per_class < 2) r.fail("dataset.source_per_class", "must be at least 2");
        if (c.dataset.target_per_class < 2) r.fail("dataset.target_per_class", "must be at least 2");
        if (c.dataset.shape.channels != 1) r.fail("dataset.channels", "synthetic data is single-channel");
    }
    if (size < 16) r.fail("dataset.image_size", "must be at least 16");
    if (c.dataset.shape.channels < 1) r.fail("dataset.channels", "must be at least 1");

    c.width = r.get("model.width", c.width);
    if (c.width < 1) r.fail("model.width", "must be at least 1");
    if (r.has("model.groups")) {
        const std::string groups = r.raw("model.groups");
        if (groups != "stem,stage1,stage2,stage3,head")
            r.fail("model.groups", "the micro residual network has groups stem,stage1,stage2,stage3,head");
    }

    c.augment.flip_h = r.get("augment.flip_h", c.augment.flip_h);
    c.augment.flip_v = r.get("augment.flip_v", c.augment.flip_v);
    c.augment.max_rotate = r.get("augment.max_rotate", c.augment.max_rotate);
    c.augment.max_zoom = r.get("augment.max_zoom", c.augment.max_zoom);
    c.augment.max_lighting = r.get("augment.max_lighting", c.augment.max_lighting);
    try {
        c.augment.validate();
    } catch (const ConfigError& e) {
        r.fail("augment", e.what());
    }

    c.pretrain.epochs = r.get("pretrain.epochs", c.pretrain.epochs);
    c.pretrain.lr = r.get("pretrain.lr", c.pretrain.lr);
    if (!(c.pretrain.lr > 0.0)) r.fail("pretrain.lr", "must be positive");
    c.pretrain.augment = r.get_bool("pretrain.augment", true) ? std::optional<AugmentPolicy>(c.augment) : std::nullopt;
    c.pretrain.cosine.enabled = r.get_bool("pretrain.cosine", c.pretrain.cosine.enabled);
    c.pretrain.cosine.min_ratio = r.get("pretrain.min_ratio", c.pretrain.cosine.min_ratio);
    c.pretrain.width = c.width;

    c.folds = r.get("protocol.folds", c.folds);
    if (c.folds < 2) r.fail("protocol.folds", "must be at least 2");
    c.training.batch_size = r.get("protocol.batch_size", c.training.batch_size);
    if (c.training.batch_size < 1) r.fail("protocol.batch_size", "must be at least 1");
    c.training.top_losses = r.get("protocol.top_losses", c.training.top_losses);

    for (auto& s : c.stages) s = detail::read_stage(r, s, c.augment);

    c.lrfind.lr_lo = r.get("lrfind.lr_lo", c.lrfind.lr_lo);
    c.lrfind.lr_hi = r.get("lrfind.lr_hi", c.lrfind.lr_hi);
    c.lrfind.num_iters = r.get("lrfind.iters", c.lrfind.num_iters);
    c.lrfind.smoothing = r.get("lrfind.smoothing", c.lrfind.smoothing);
    c.lrfind.divergence_factor = r.get("lrfind.divergence_factor", c.lrfind.divergence_factor);
    try {
        validate(c.lrfind);
    } catch (const ConfigError& e) {
        r.fail("lrfind", e.what());
    }

    c.baseline.enabled = r.get_bool("baseline.enabled", c.baseline.enabled);
    c.baseline.lr = r.get("baseline.lr", c.baseline.lr);
    c.baseline.epochs = r.get("baseline.epochs", c.baseline.epochs);
    c.baseline.cosine.enabled = r.get_bool("baseline.cosine", c.baseline.cosine.enabled);
    c.baseline.cosine.min_ratio = r.get("baseline.min_ratio", c.baseline.cosine.min_ratio);
    if (!(c.baseline.lr > 0.0)) r.fail("baseline.lr", "must be positive");
    if (c.baseline.cosine.enabled && !(c.baseline.cosine.min_ratio > 0.0 && c.baseline.cosine.min_ratio < 1.0))
        r.fail("baseline.min_ratio", "must be in (0, 1)");

    r.reject_unknown();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_config(text, path.string());
}

}  // namespace xferlab
