#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xferlab/checkpoint.hpp"
#include "xferlab/config.hpp"
#include "xferlab/dataset.hpp"
#include "xferlab/folds.hpp"
#include "xferlab/protocol.hpp"
#include "xferlab/synthetic.hpp"

namespace xferlab {

using Json = nlohmann::ordered_json;

/// Relative output path -> file bytes. Commands build one of these and a
/// single writer puts it on disk.
using Artifacts = std::map<std::string, std::string>;

namespace seeds {
inline std::uint64_t data(std::uint64_t s) { return derive_seed(s, {0xDA7AULL}); }
inline std::uint64_t folds(std::uint64_t s) { return derive_seed(s, {0xF01DULL}); }
inline std::uint64_t init(std::uint64_t s) { return derive_seed(s, {0x1417ULL}); }
inline std::uint64_t pretrain(std::uint64_t s) { return derive_seed(s, {0x5052ULL}); }
inline std::uint64_t protocol(std::uint64_t s) { return derive_seed(s, {0x7052ULL}); }
inline std::uint64_t baseline(std::uint64_t s) { return derive_seed(s, {0xBA5EULL}); }
}  // namespace seeds

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

/// CSV `stage,epoch,train_loss,valid_loss,error_rate,accuracy`.
inline std::string epochs_csv(const std::vector<EpochRecord>& records) {
    std::string out = "stage,epoch,train_loss,valid_loss,error_rate,accuracy\n";
    for (const auto& r : records)
        out += std::to_string(r.stage) + ',' + std::to_string(r.epoch) + ',' + fmt_double(r.train_loss) + ',' +
               fmt_double(r.valid_loss) + ',' + fmt_double(r.error_rate) + ',' + fmt_double(r.accuracy) + '\n';
    return out;
}

inline Json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"valid_loss", r.valid_loss},
            {"error_rate", r.error_rate},
            {"accuracy", r.accuracy}};
}

inline Json to_json(const Aggregate& a) { return {{"mean", a.mean}, {"std", a.std}}; }

inline Json to_json(const StageAggregate& a) {
    return {{"accuracy", to_json(a.accuracy)},   {"error_rate", to_json(a.error_rate)},
            {"precision", to_json(a.precision)}, {"recall", to_json(a.recall)},
            {"f1", to_json(a.f1)},               {"train_loss", to_json(a.train_loss)},
            {"valid_loss", to_json(a.valid_loss)}};
}

/// Stage report without timing; `seconds` goes to the timing block.
inline Json to_json(const StageReport& r) {
    Json j;
    j["stage"] = stage_number(r.stage);
    j["group_lrs"] = r.group_lrs;
    if (r.lr_trace) {
        j["lr_finder"] = {{"suggested_lr", r.lr_trace->suggested_lr},
                          {"points", r.lr_trace->points.size()},
                          {"divergence_index", r.lr_trace->divergence_index ? Json(*r.lr_trace->divergence_index)
                                                                             : Json(nullptr)}};
    }
    j["epochs"] = r.epochs.size();
    j["train_loss"] = r.train_loss;
    j["valid_loss"] = r.valid_loss;
    j["metrics"] = to_json(r.metrics);
    Json tl = Json::array();
    for (const auto& e : r.top_losses) tl.push_back(to_json(e));
    j["top_losses"] = std::move(tl);
    return j;
}

inline Json lr_policy_json(const LrPolicy& p) {
    if (const auto* f = std::get_if<FixedLr>(&p)) return {{"policy", "fixed"}, {"lr", f->lr}};
    if (const auto* o = std::get_if<OlrfLr>(&p))
        return {{"policy", "olrf"}, {"lr_lo", o->lo}, {"lr_hi", o->hi}, {"iters", o->iters}, {"smoothing", o->smoothing}};
    const auto& s = std::get<SliceLr>(p);
    return {{"policy", "slice"}, {"lr_lo", s.lo}, {"lr_hi", s.hi}};
}

inline Json to_json(const AugmentPolicy& a) {
    return {{"flip_h", a.flip_h}, {"flip_v", a.flip_v}, {"max_rotate", a.max_rotate}, {"max_zoom", a.max_zoom},
            {"max_lighting", a.max_lighting}};
}

inline Json to_json(const CosineSettings& c) {
    return {{"enabled", c.enabled}, {"cycle_epochs", c.cycle_epochs}, {"cycle_mult", c.cycle_mult},
            {"min_ratio", c.min_ratio}};
}

/// Every setting that influences results. Output location and thread count
/// are left out: they never change a result byte.
inline Json to_json(const ExperimentConfig& c) {
    Json j;
    j["seed"] = c.seed;
    const bool synthetic = c.dataset.kind == DatasetConfig::Kind::synthetic;
    Json d{{"kind", synthetic ? "synthetic" : "directory"}};
    if (synthetic) {
        d["source_classes"] = c.dataset.source_classes;
        d["target_classes"] = c.dataset.target_classes;
        d["source_per_class"] = c.dataset.source_per_class;
        d["target_per_class"] = c.dataset.target_per_class;
    } else {
        d["source_dir"] = c.dataset.source_dir;
        d["target_dir"] = c.dataset.target_dir;
    }
    d["input_shape"] = {c.dataset.shape.channels, c.dataset.shape.height, c.dataset.shape.width};
    d["standardize"] = c.training.standardize;
    j["dataset"] = d;
    j["model"] = {{"width", c.width}, {"groups", {"stem", "stage1", "stage2", "stage3", "head"}}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs},
                     {"lr", c.pretrain.lr},
                     {"augment", c.pretrain.augment.has_value()},
                     {"cosine", to_json(c.pretrain.cosine)}};
    j["protocol"] = {{"folds", c.folds}, {"batch_size", c.training.batch_size}, {"top_losses", c.training.top_losses}};
    for (const auto& s : c.stages) {
        Json sj{{"epochs", s.epochs}};
        sj["lr"] = lr_policy_json(s.lr);
        sj["augment"] = s.augment.has_value();
        sj["cosine"] = to_json(s.cosine);
        j["stage" + std::to_string(stage_number(s.stage))] = sj;
    }
    j["augment"] = to_json(c.augment);
    j["lrfind"] = {{"lr_lo", c.lrfind.lr_lo},
                   {"lr_hi", c.lrfind.lr_hi},
                   {"iters", c.lrfind.num_iters},
                   {"smoothing", c.lrfind.smoothing},
                   {"divergence_factor", c.lrfind.divergence_factor}};
    j["baseline"] = {{"enabled", c.baseline.enabled},
                     {"lr", c.baseline.lr},
                     {"epochs", c.baseline_epochs()},
                     {"cosine", to_json(c.baseline.cosine)}};
    return j;
}

struct ExperimentData {
    TransferSetting task;
    FoldPlan plan;
};

/// Generates or loads source and target, then splits the target.
inline ExperimentData load_experiment_data(const ExperimentConfig& c) {
    TransferSetting task;
    if (c.dataset.kind == DatasetConfig::Kind::synthetic) {
        task = make_synthetic_transfer_task(seeds::data(c.seed), c.dataset.source_classes, c.dataset.target_classes,
                                            c.dataset.source_per_class, c.dataset.target_per_class, c.dataset.shape.height);
    } else {
        task.source = load_directory(c.dataset.source_dir, c.dataset.shape);
        task.target = load_directory(c.dataset.target_dir, c.dataset.shape);
    }
    task.validate();
    FoldPlan plan = stratified_kfold(task.target, c.folds, seeds::folds(c.seed));
    return {std::move(task), std::move(plan)};
}

inline PretrainResult pretrain_for(const ExperimentConfig& c, const TransferSetting& task) {
    PretrainConfig pc = c.pretrain;
    pc.width = c.width;
    Model init = build_micro_resnet(task.input_shape(), task.source.num_classes(), c.width, seeds::init(c.seed));
    return pretrain_source(std::move(init), task.source, pc, c.training, seeds::pretrain(c.seed));
}

inline BaselineResult baseline_for(const ExperimentConfig& c, const ExperimentData& data) {
    return scratch_baseline(data.task.target, data.plan, c.width, c.baseline_epochs(), c.baseline.lr, c.baseline.cosine,
                            c.training, seeds::baseline(c.seed), c.jobs);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

namespace detail {

inline Json dataset_json(const TransferSetting& task, const FoldPlan& plan) {
    auto side = [](const LabeledDataset& ds) {
        return Json{{"classes", ds.class_names}, {"class_counts", ds.class_counts()}, {"samples", ds.size()}};
    };
    std::vector<std::size_t> sizes;
    for (std::size_t f = 0; f < plan.k; ++f) sizes.push_back(plan.fold_size(f));
    return {{"source", side(task.source)}, {"target", side(task.target)}, {"fold_sizes", sizes}};
}

inline Json baseline_json(const BaselineResult& b, const ExperimentConfig& c, Json& timing, Artifacts& files) {
    Json j{{"epochs", c.baseline_epochs()}, {"lr", c.baseline.lr}};
    Json folds = Json::array();
    std::vector<double> secs;
    for (std::size_t f = 0; f < b.folds.size(); ++f) {
        Json fj{{"fold", f}};
        const Json rep = to_json(b.folds[f]);
        for (const auto& [key, value] : rep.items())
            if (key != "stage" && key != "group_lrs") fj[key] = value;
        folds.push_back(std::move(fj));
        secs.push_back(b.folds[f].seconds);
        files["baseline_fold_" + std::to_string(f) + ".csv"] = epochs_csv(b.folds[f].epochs);
    }
    j["folds"] = std::move(folds);
    j["aggregate"] = to_json(b.aggregate);
    timing["baseline_fold_seconds"] = secs;
    return j;
}

}  // namespace detail

/// Full experiment: pretrain on the source, run the three stages on every
/// target fold, and optionally the scratch baseline. Returns every output
/// file keyed by relative path. Wall-clock numbers appear only under the
/// "timing" key of summary.json.
inline Artifacts run_experiment(const ExperimentConfig& c, bool with_protocol = true) {
    const auto t0 = std::chrono::steady_clock::now();
    Artifacts files;
    Json timing;
    Json summary;
    const ExperimentData data = load_experiment_data(c);
    summary["config"] = to_json(c);
    summary["dataset"] = detail::dataset_json(data.task, data.plan);
    files["folds.csv"] = to_csv(data.plan);
    timing["data_seconds"] = seconds_since(t0);

    std::optional<double> protocol_acc;
    if (with_protocol) {
        auto pre = pretrain_for(c, data.task);
        timing["pretrain_seconds"] = pre.seconds;
        files["pretrain.csv"] = epochs_csv(pre.epochs);
        files["checkpoints/pretrained.ckpt"] = serialize_checkpoint(pre.model);
        summary["pretrain"] = {{"epochs", pre.epochs.size()},
                               {"source_valid_accuracy", pre.source_valid_accuracy},
                               {"base_checksum", hex64(pre.model.base_checksum())}};

        const auto t1 = std::chrono::steady_clock::now();
        ProtocolResult res = run_protocol(pre.model, data.task.target, data.plan, c.stages, c.training,
                                          seeds::protocol(c.seed), c.jobs);
        timing["protocol_seconds"] = seconds_since(t1);

        Json folds = Json::array(), fold_secs = Json::array(), stage_secs = Json::array();
        for (auto& fr : res.folds) {
            Json fj{{"fold", fr.fold}, {"valid_size", data.plan.fold_size(fr.fold)}};
            Json stages = Json::array();
            std::vector<double> ss;
            for (std::size_t s = 0; s < 3; ++s) {
                const auto& rep = fr.stages[s];
                Json sj = to_json(rep);
                sj["base_checksum"] = hex64(fr.base_checksums[s]);
                if (s < 2) sj["base_unchanged"] = fr.base_checksums[s] == fr.pretrained_base_checksum;
                stages.push_back(std::move(sj));
                ss.push_back(rep.seconds);
                const std::string tag = std::to_string(s + 1) + "_" + std::to_string(fr.fold);
                files["stage_" + std::to_string(s + 1) + "_fold_" + std::to_string(fr.fold) + ".csv"] =
                    epochs_csv(rep.epochs);
                files["confusion_" + tag + ".json"] = to_json(rep.confusion).dump(2) + "\n";
                files["checkpoints/stage_" + tag + ".ckpt"] = serialize_checkpoint(*fr.checkpoints[s]);
            }
            fj["stages"] = std::move(stages);
            folds.push_back(std::move(fj));
            fold_secs.push_back(fr.seconds);
            stage_secs.push_back(ss);
        }
        summary["folds"] = std::move(folds);
        timing["fold_seconds"] = std::move(fold_secs);
        timing["stage_seconds"] = std::move(stage_secs);
        Json agg;
        for (std::size_t s = 0; s < 3; ++s) agg["stage_" + std::to_string(s + 1)] = to_json(res.aggregate[s]);
        summary["aggregate"] = agg;
        protocol_acc = res.aggregate[2].accuracy.mean;
    }

    if (c.baseline.enabled || !with_protocol) {
        const auto t2 = std::chrono::steady_clock::now();
        const BaselineResult b = baseline_for(c, data);
        timing["baseline_seconds"] = seconds_since(t2);
        summary["baseline"] = detail::baseline_json(b, c, timing, files);
        if (protocol_acc) {
            summary["comparison"] = {{"protocol_accuracy", *protocol_acc},
                                     {"baseline_accuracy", b.aggregate.accuracy.mean},
                                     {"difference", *protocol_acc - b.aggregate.accuracy.mean}};
        }
    }
    timing["total_seconds"] = seconds_since(t0);
    summary["timing"] = timing;
    files["summary.json"] = summary.dump(2) + "\n";
    return files;
}

/// LR range test for Stage I: the pretrained base with a fresh target head,
/// base frozen, swept on the training side of fold 0.
inline Artifacts run_lrfind(const ExperimentConfig& c) {
    const ExperimentData data = load_experiment_data(c);
    auto pre = pretrain_for(c, data.task);
    Model model = replace_head(pre.model, data.task.target.num_classes(), derive_seed(seeds::protocol(c.seed), {0, 0x4844ULL}));
    model.freeze_base();
    const FoldContext ctx(data.task.target, data.plan, 0, c.training);
    const BatchStream train = ctx.train_stream(std::nullopt, stage_seed(seeds::protocol(c.seed), 0, StageId::I));
    ModelLrProbe probe(model, train);
    const LrFinderTrace trace = lr_range_test(probe, c.lrfind);
    Artifacts files;
    files["lrfind.csv"] = to_csv(trace);
    files["lrfind.json"] = Json{{"suggested_lr", trace.suggested_lr},
                                {"lr_lo", c.lrfind.lr_lo},
                                {"lr_hi", c.lrfind.lr_hi},
                                {"iters", c.lrfind.num_iters},
                                {"points", trace.points.size()},
                                {"divergence_index", trace.divergence_index ? Json(*trace.divergence_index) : Json(nullptr)}}
                               .dump(2) +
                           "\n";
    return files;
}

/// Synthetic corpus in the on-disk layout: `source/<class>/<stem>.pgm` and
/// `target/<class>/<stem>.pgm`.
inline Artifacts generate_corpus(const ExperimentConfig& c) {
    const auto task = make_synthetic_transfer_task(seeds::data(c.seed), c.dataset.source_classes, c.dataset.target_classes,
                                                   c.dataset.source_per_class, c.dataset.target_per_class,
                                                   c.dataset.shape.height);
    Artifacts files;
    auto put = [&files](const LabeledDataset& ds, const std::string& root) {
        for (const auto& s : ds.samples) {
            const auto slash = s.id.rfind('/');
            files[root + "/" + ds.class_names[s.label] + "/" + s.id.substr(slash + 1) + ".pgm"] =
                encode_pgm(to_gray(s.image));
        }
    };
    put(task.source, "source");
    put(task.target, "target");
    return files;
}

inline void write_artifacts(const Artifacts& files, const std::filesystem::path& root) {
    for (const auto& [rel, bytes] : files) write_file_atomic(root / rel, bytes);
}

}  // namespace xferlab
