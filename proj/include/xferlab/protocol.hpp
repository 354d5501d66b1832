#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "xferlab/augment.hpp"
#include "xferlab/batches.hpp"
#include "xferlab/dataset.hpp"
#include "xferlab/error.hpp"
#include "xferlab/folds.hpp"
#include "xferlab/lr_finder.hpp"
#include "xferlab/metrics.hpp"
#include "xferlab/model.hpp"
#include "xferlab/rng.hpp"
#include "xferlab/training.hpp"

namespace xferlab {

enum class StageId : std::size_t { I = 1, II = 2, III = 3 };

inline std::size_t stage_number(StageId s) { return static_cast<std::size_t>(s); }

struct FixedLr {
    double lr = 1e-3;
};

/// Rate chosen by an LR range test at the start of the stage.
struct OlrfLr {
    double lo = 2e-4;
    double hi = 2e-2;
    std::size_t iters = 60;
    double smoothing = 0.9;
    double divergence_factor = 4.0;
};

/// Discriminative rates over all layer groups.
struct SliceLr {
    double lo = 3e-6;
    double hi = 4e-3;
};

using LrPolicy = std::variant<FixedLr, OlrfLr, SliceLr>;

struct CosineSettings {
    bool enabled = false;
    std::size_t cycle_epochs = 1;
    std::size_t cycle_mult = 1;
    double min_ratio = 0.01;
};

struct StageConfig {
    StageId stage = StageId::I;
    std::size_t epochs = 1;
    LrPolicy lr = FixedLr{};
    std::optional<AugmentPolicy> augment;
    CosineSettings cosine;

    bool base_frozen() const { return stage != StageId::III; }

    void validate() const {
        const std::string where = "stage" + std::to_string(stage_number(stage));
        if (epochs < 1) throw ConfigError(where + ".epochs must be positive");
        if (stage == StageId::III && !std::holds_alternative<SliceLr>(lr))
            throw ConfigError(where + " must use a slice learning-rate policy");
        if (stage != StageId::III && std::holds_alternative<SliceLr>(lr))
            throw ConfigError(where + " trains only the head; a slice policy needs stage 3");
        if (const auto* f = std::get_if<FixedLr>(&lr); f && !(f->lr > 0.0 && std::isfinite(f->lr)))
            throw ConfigError(where + ".lr must be positive");
        if (const auto* o = std::get_if<OlrfLr>(&lr)) {
            xferlab::validate(LrFinderConfig{o->lo, o->hi, o->iters, o->smoothing, o->divergence_factor});
        }
        if (const auto* s = std::get_if<SliceLr>(&lr); s && !(s->lo > 0.0 && s->lo <= s->hi))
            throw ConfigError(where + " slice needs 0 < lo <= hi");
        if (augment) augment->validate();
        if (cosine.enabled) {
            if (cosine.cycle_epochs < 1 || cosine.cycle_mult < 1)
                throw ConfigError(where + " cosine cycle settings must be >= 1");
            if (!(cosine.min_ratio > 0.0 && cosine.min_ratio < 1.0))
                throw ConfigError(where + ".min_ratio must be in (0, 1)");
        }
    }
};

/// Knobs shared by every stage of a run.
struct TrainingOptions {
    std::size_t batch_size = 16;
    bool standardize = true;
    std::size_t top_losses = 10;
};

struct EpochRecord {
    std::size_t stage = 0;
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double error_rate = 0.0;
    double accuracy = 0.0;
};

struct StageReport {
    StageId stage = StageId::I;
    std::vector<EpochRecord> epochs;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    MetricsReport metrics;
    ConfusionMatrix confusion;
    std::vector<TopLossEntry> top_losses;
    std::vector<double> group_lrs;            // base rates before any cosine scaling
    std::optional<LrFinderTrace> lr_trace;    // set when the rate came from the range test
    double seconds = 0.0;                     // informational
};

/// One fold's view of a dataset: split indices, batching and the channel
/// statistics of its training side.
struct FoldContext {
    const LabeledDataset* data = nullptr;
    const FoldPlan* plan = nullptr;
    std::size_t fold = 0;
    TrainingOptions options;
    ChannelStats stats;

    FoldContext(const LabeledDataset& ds, const FoldPlan& p, std::size_t f, TrainingOptions opt)
        : data(&ds), plan(&p), fold(f), options(opt) {
        if (f >= p.k) throw ConfigError("fold " + std::to_string(f) + " out of range for k=" + std::to_string(p.k));
        if (options.standardize) stats = sanitize_stats(compute_stats(ds, p.train_indices(f)));
    }

    BatchStream train_stream(const std::optional<AugmentPolicy>& policy, std::uint64_t seed) const {
        return BatchStream(*data, *plan, fold, Split::train, options.batch_size, policy, seed, stats);
    }

    BatchStream valid_stream() const {
        return BatchStream(*data, *plan, fold, Split::valid, options.batch_size, std::nullopt, 0, stats);
    }
};

namespace detail {

struct TrainLoopResult {
    std::vector<EpochRecord> epochs;
    Evaluation final_eval;
};

/// Runs `epochs` epochs of Adam over the stream. On divergence the model is
/// put back to its state after the last completed epoch and the error is
/// rethrown.
inline TrainLoopResult train_epochs(Model& model, const BatchStream& train, const BatchStream& valid,
                                    const LabeledDataset& ds, std::size_t epochs, std::span<const double> base_lrs,
                                    const CosineSettings& cosine, std::size_t stage_no) {
    TrainLoopResult out;
    AdamState adam;
    const std::size_t per_epoch = train.batch_count();
    LrMultiplier mult = cosine.enabled ? LrMultiplier(cosine.cycle_epochs * per_epoch, cosine.cycle_mult, cosine.min_ratio)
                                       : LrMultiplier();
    std::vector<double> lrs(base_lrs.begin(), base_lrs.end());
    Model last_good = model;
    for (std::size_t e = 0; e < epochs; ++e) {
        double loss_sum = 0.0;
        std::size_t seen = 0;
        try {
            for (const auto& batch : train.epoch(e)) {
                const double m = mult.next();
                for (std::size_t g = 0; g < lrs.size(); ++g) lrs[g] = base_lrs[g] * m;
                loss_sum += train_step(model, adam, batch, lrs, adam.t) * static_cast<double>(batch.labels.size());
                seen += batch.labels.size();
            }
        } catch (const DivergenceError& err) {
            model = last_good;
            throw DivergenceError("stage " + std::to_string(stage_no) + " epoch " + std::to_string(e + 1) + ": " +
                                      err.what(),
                                  err.iteration());
        }
        out.final_eval = evaluate(model, valid, ds);
        out.epochs.push_back({stage_no, e + 1, loss_sum / static_cast<double>(seen), out.final_eval.loss,
                              out.final_eval.report.error_rate, out.final_eval.report.accuracy});
        last_good = model;
    }
    if (epochs == 0) out.final_eval = evaluate(model, valid, ds);
    return out;
}

}  // namespace detail

/// Runs one protocol stage on `model` in place.
///
/// Stages I and II freeze every base group (parameters and normalization
/// statistics); Stage III makes all groups trainable. The rate comes from
/// the stage's policy: a fixed value, an LR range test on a copy of the
/// current model, or a geometric slice across groups. `seed` drives the
/// shuffle and augmentation streams.
inline StageReport run_stage(Model& model, const StageConfig& cfg, const FoldContext& ctx, std::uint64_t seed) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t groups = model.group_count();
    StageReport rep;
    rep.stage = cfg.stage;
    if (cfg.base_frozen()) model.freeze_base();
    else model.set_all_trainable(true);

    const BatchStream train = ctx.train_stream(cfg.augment, seed);
    const BatchStream valid = ctx.valid_stream();

    if (const auto* f = std::get_if<FixedLr>(&cfg.lr)) {
        rep.group_lrs.assign(groups, f->lr);
    } else if (const auto* o = std::get_if<OlrfLr>(&cfg.lr)) {
        ModelLrProbe probe(model, train);
        auto trace = lr_range_test(probe, LrFinderConfig{o->lo, o->hi, o->iters, o->smoothing, o->divergence_factor});
        const double lr = std::clamp(trace.suggested_lr, o->lo, o->hi);
        rep.group_lrs.assign(groups, lr);
        rep.lr_trace = std::move(trace);
    } else {
        const auto& s = std::get<SliceLr>(cfg.lr);
        rep.group_lrs = slice_lrs({s.lo, s.hi, groups});
    }
    model.set_learning_rates(rep.group_lrs);

    auto result = detail::train_epochs(model, train, valid, *ctx.data, cfg.epochs, rep.group_lrs, cfg.cosine,
                                       stage_number(cfg.stage));
    rep.epochs = std::move(result.epochs);
    rep.train_loss = rep.epochs.empty() ? 0.0 : rep.epochs.back().train_loss;
    rep.valid_loss = result.final_eval.loss;
    rep.metrics = result.final_eval.report;
    rep.confusion = result.final_eval.confusion;
    rep.top_losses = top_losses(result.final_eval, *ctx.data, ctx.options.top_losses);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline std::uint64_t stage_seed(std::uint64_t seed, std::size_t fold, StageId stage) {
    return derive_seed(seed, {fold, stage_number(stage)});
}

/// Stage I -> II -> III on one fold, with order enforcement and per-stage
/// model snapshots.
class ProtocolRun {
public:
    /// Starts from a source-trained model; its head is replaced to match the
    /// target class count before Stage I.
    ProtocolRun(const Model& pretrained, const LabeledDataset& target, const FoldPlan& plan, std::size_t fold,
                std::array<StageConfig, 3> stages, TrainingOptions options, std::uint64_t seed)
        : ctx_(target, plan, fold, options), stages_(std::move(stages)), seed_(seed),
          model_(replace_head(pretrained, target.num_classes(), derive_seed(seed, {fold, 0x4844ULL}))) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (stage_number(stages_[i].stage) != i + 1) throw ConfigError("stage configs must be ordered I, II, III");
            stages_[i].validate();
        }
    }

    /// Continues a run whose first `completed` stages produced `checkpoint`.
    static ProtocolRun resume(const Model& checkpoint, std::size_t completed, const LabeledDataset& target,
                              const FoldPlan& plan, std::size_t fold, std::array<StageConfig, 3> stages,
                              TrainingOptions options, std::uint64_t seed) {
        if (completed > 3) throw ProtocolOrderError("cannot resume after stage " + std::to_string(completed));
        if (checkpoint.num_classes() != target.num_classes())
            throw ConfigError("checkpoint head has " + std::to_string(checkpoint.num_classes()) + " classes, target has " +
                              std::to_string(target.num_classes()));
        ProtocolRun run(checkpoint, target, plan, fold, std::move(stages), options, seed);
        run.model_ = checkpoint;
        run.completed_ = completed;
        return run;
    }

    std::size_t completed_stages() const noexcept { return completed_; }
    Model& model() noexcept { return model_; }
    const Model& model() const noexcept { return model_; }
    const std::vector<StageReport>& reports() const noexcept { return reports_; }
    const std::optional<Model>& snapshot(StageId s) const { return snapshots_.at(stage_number(s) - 1); }
    std::size_t fold() const noexcept { return ctx_.fold; }
    const FoldContext& context() const noexcept { return ctx_; }

    /// Runs `stage`, which must be the next one in order.
    const StageReport& run_stage(StageId stage) {
        const std::size_t n = stage_number(stage);
        if (n != completed_ + 1) {
            throw ProtocolOrderError("stage " + std::to_string(n) + " requested but " +
                                     (completed_ == 3 ? std::string("all stages are done")
                                                      : "stage " + std::to_string(completed_ + 1) + " is next"));
        }
        reports_.push_back(xferlab::run_stage(model_, stages_[n - 1], ctx_, stage_seed(seed_, ctx_.fold, stage)));
        snapshots_[n - 1] = model_;
        completed_ = n;
        return reports_.back();
    }

    void run_remaining() {
        while (completed_ < 3) run_stage(static_cast<StageId>(completed_ + 1));
    }

private:
    FoldContext ctx_;
    std::array<StageConfig, 3> stages_;
    std::uint64_t seed_;
    Model model_;
    std::size_t completed_ = 0;
    std::vector<StageReport> reports_;
    std::array<std::optional<Model>, 3> snapshots_;
};

struct PretrainConfig {
    std::size_t epochs = 8;
    double lr = 2e-3;
    std::size_t width = 8;
    std::size_t holdout_folds = 5;  // fold 0 of this split is the source validation set
    std::optional<AugmentPolicy> augment;
    CosineSettings cosine{true, 1000000, 1, 0.05};  // one long cycle by default
};

struct PretrainResult {
    Model model;
    std::vector<EpochRecord> epochs;
    double source_valid_accuracy = 0.0;
    double seconds = 0.0;
};

/// Trains every group of `model` on the source task, validating on fold 0 of
/// a stratified split of the source data.
inline PretrainResult pretrain_source(Model model, const LabeledDataset& source, const PretrainConfig& cfg,
                                      TrainingOptions options, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    if (model.num_classes() != source.num_classes())
        throw ConfigError("model head has " + std::to_string(model.num_classes()) + " outputs but the source task has " +
                          std::to_string(source.num_classes()) + " classes");
    if (!(cfg.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
    if (cfg.augment) cfg.augment->validate();
    const FoldPlan plan = stratified_kfold(source, cfg.holdout_folds, derive_seed(seed, {0x5352ULL}));
    const FoldContext ctx(source, plan, 0, options);
    const BatchStream train = ctx.train_stream(cfg.augment, derive_seed(seed, {0x5352ULL, 1}));
    const BatchStream valid = ctx.valid_stream();
    model.set_all_trainable(true);
    const std::vector<double> lrs(model.group_count(), cfg.lr);
    model.set_learning_rates(lrs);
    CosineSettings cosine = cfg.cosine;
    if (cosine.enabled) cosine.cycle_epochs = std::min(cosine.cycle_epochs, std::max<std::size_t>(cfg.epochs, 1));
    auto result = detail::train_epochs(model, train, valid, source, cfg.epochs, lrs, cosine, 0);
    PretrainResult out{std::move(model), std::move(result.epochs), result.final_eval.report.accuracy, 0.0};
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// Mean and population standard deviation of one metric across folds.
struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
};

inline Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    for (double v : values) a.std += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(a.std / static_cast<double>(values.size()));
    return a;
}

struct StageAggregate {
    Aggregate train_loss, valid_loss, error_rate, accuracy, precision, recall, f1;
};

inline StageAggregate aggregate_reports(std::span<const StageReport* const> reports) {
    auto collect = [&](auto getter) {
        std::vector<double> v;
        for (const auto* r : reports) v.push_back(getter(*r));
        return aggregate(v);
    };
    return {collect([](const StageReport& r) { return r.train_loss; }),
            collect([](const StageReport& r) { return r.valid_loss; }),
            collect([](const StageReport& r) { return r.metrics.error_rate; }),
            collect([](const StageReport& r) { return r.metrics.accuracy; }),
            collect([](const StageReport& r) { return r.metrics.micro.precision; }),
            collect([](const StageReport& r) { return r.metrics.micro.recall; }),
            collect([](const StageReport& r) { return r.metrics.micro.f1; })};
}

struct FoldResult {
    std::size_t fold = 0;
    std::vector<StageReport> stages;
    std::array<std::optional<Model>, 3> checkpoints;
    std::uint64_t pretrained_base_checksum = 0;
    std::array<std::uint64_t, 3> base_checksums{};  // after each stage
    double seconds = 0.0;
};

struct ProtocolResult {
    std::vector<FoldResult> folds;
    std::array<StageAggregate, 3> aggregate;
};

namespace detail {

/// Re-raises the active exception with a fold prefix, keeping its type.
[[noreturn]] inline void rethrow_with_fold(std::size_t fold) {
    const std::string pre = "fold " + std::to_string(fold) + ": ";
    try {
        throw;
    } catch (const DivergenceError& e) {
        throw DivergenceError(pre + e.what(), e.iteration());
    } catch (const ProtocolOrderError& e) {
        throw ProtocolOrderError(pre + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(pre + e.what());
    } catch (const DataError& e) {
        throw DataError(pre + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(pre + e.what());
    } catch (const IoError& e) {
        throw IoError(pre + e.what());
    }
}

/// Calls body(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots; the first failure (lowest index) is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& body) {
    std::vector<std::exception_ptr> errors(n);
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        body(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// For each fold: replace the head, then Stages I, II and III. Folds are
/// independent and may run on `jobs` threads without changing results.
inline ProtocolResult run_protocol(const Model& pretrained, const LabeledDataset& target, const FoldPlan& plan,
                                   const std::array<StageConfig, 3>& stages, TrainingOptions options,
                                   std::uint64_t seed, std::size_t jobs = 1) {
    if (plan.k < 2) throw ConfigError("protocol needs k >= 2");
    ProtocolResult out;
    out.folds.resize(plan.k);
    Model reference = pretrained;
    const std::uint64_t pre_checksum = reference.base_checksum();
    detail::parallel_for(plan.k, jobs, [&](std::size_t f) {
        try {
            const auto t0 = std::chrono::steady_clock::now();
            ProtocolRun run(pretrained, target, plan, f, stages, options, seed);
            FoldResult fr;
            fr.fold = f;
            fr.pretrained_base_checksum = pre_checksum;
            for (std::size_t s = 1; s <= 3; ++s) {
                run.run_stage(static_cast<StageId>(s));
                fr.base_checksums[s - 1] = run.model().base_checksum();
                fr.checkpoints[s - 1] = run.snapshot(static_cast<StageId>(s));
            }
            fr.stages = run.reports();
            fr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out.folds[f] = std::move(fr);
        } catch (...) {
            detail::rethrow_with_fold(f);
        }
    });
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<const StageReport*> reps;
        for (const auto& fr : out.folds) reps.push_back(&fr.stages[s]);
        out.aggregate[s] = aggregate_reports(reps);
    }
    return out;
}

struct BaselineResult {
    std::vector<StageReport> folds;  // one report per fold
    StageAggregate aggregate;
};

/// Control arm: a randomly initialized model with every group trainable,
/// trained for `total_epochs` at a fixed rate on each fold.
inline BaselineResult scratch_baseline(const LabeledDataset& target, const FoldPlan& plan, std::size_t width,
                                       std::size_t total_epochs, double lr, const CosineSettings& cosine,
                                       TrainingOptions options, std::uint64_t seed, std::size_t jobs = 1) {
    if (!(lr > 0.0)) throw ConfigError("baseline lr must be positive");
    CosineSettings cos = cosine;
    if (cos.enabled && cos.cycle_epochs == 0) cos.cycle_epochs = std::max<std::size_t>(total_epochs, 1);
    BaselineResult out;
    out.folds.resize(plan.k);
    detail::parallel_for(plan.k, jobs, [&](std::size_t f) {
        try {
            const auto t0 = std::chrono::steady_clock::now();
            const FoldContext ctx(target, plan, f, options);
            Model model = build_micro_resnet(target.input_shape(), target.num_classes(), width,
                                             derive_seed(seed, {f, 0xBA5EULL}));
            const std::vector<double> lrs(model.group_count(), lr);
            model.set_learning_rates(lrs);
            const BatchStream train = ctx.train_stream(std::nullopt, derive_seed(seed, {f, 0xBA5EULL, 1}));
            const BatchStream valid = ctx.valid_stream();
            auto r = detail::train_epochs(model, train, valid, target, total_epochs, lrs, cos, 0);
            StageReport rep;
            rep.stage = StageId::III;
            rep.epochs = std::move(r.epochs);
            rep.train_loss = rep.epochs.empty() ? 0.0 : rep.epochs.back().train_loss;
            rep.valid_loss = r.final_eval.loss;
            rep.metrics = r.final_eval.report;
            rep.confusion = r.final_eval.confusion;
            rep.top_losses = top_losses(r.final_eval, target, options.top_losses);
            rep.group_lrs = lrs;
            rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out.folds[f] = std::move(rep);
        } catch (...) {
            detail::rethrow_with_fold(f);
        }
    });
    std::vector<const StageReport*> reps;
    for (const auto& r : out.folds) reps.push_back(&r);
    out.aggregate = aggregate_reports(reps);
    return out;
}

}  // namespace xferlab
