#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xferlab/batches.hpp"
#include "xferlab/dataset.hpp"
#include "xferlab/error.hpp"
#include "xferlab/lr_finder.hpp"
#include "xferlab/metrics.hpp"
#include "xferlab/model.hpp"
#include "xferlab/ops.hpp"
#include "xferlab/optim.hpp"
#include "xferlab/schedule.hpp"

namespace xferlab {

/// Validation-pass outputs for one model on one split.
struct Evaluation {
    double loss = 0.0;  // mean per-sample cross-entropy
    std::vector<double> losses;
    std::vector<std::size_t> predictions;
    std::vector<std::size_t> truths;
    std::vector<std::size_t> indices;
    ConfusionMatrix confusion;
    MetricsReport report;
};

inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

inline Evaluation evaluate(const Model& model, const BatchStream& stream, const LabeledDataset& ds) {
    Evaluation ev;
    const std::size_t k = model.num_classes();
    for (const auto& batch : stream.epoch(0)) {
        const Tensor scores = model.predict(batch.images);
        const auto losses = per_sample_cross_entropy(scores, batch.labels);
        for (std::size_t n = 0; n < batch.labels.size(); ++n) {
            ev.predictions.push_back(argmax_row(scores.data().subspan(n * k, k)));
            ev.truths.push_back(batch.labels[n]);
            ev.indices.push_back(batch.indices[n]);
            ev.losses.push_back(losses[n]);
        }
    }
    if (ev.losses.empty()) throw DataError("evaluation split is empty");
    double sum = 0.0;
    for (double l : ev.losses) sum += l;
    ev.loss = sum / static_cast<double>(ev.losses.size());
    ev.confusion = confusion(ev.truths, ev.predictions, k, ds.class_names);
    ev.report = metrics(ev.confusion);
    return ev;
}

inline std::vector<TopLossEntry> top_losses(const Evaluation& ev, const LabeledDataset& ds, std::size_t n) {
    std::vector<TopLossEntry> all;
    all.reserve(ev.losses.size());
    for (std::size_t i = 0; i < ev.losses.size(); ++i)
        all.push_back({ds.samples.at(ev.indices[i]).id, ev.predictions[i], ev.truths[i], ev.losses[i]});
    return top_losses(std::move(all), n);
}

/// Forward, backward and one Adam update on a batch. Returns the batch loss
/// measured before the update. Non-finite losses raise DivergenceError
/// before any parameter changes.
inline double train_step(Model& model, AdamState& adam, const Batch& batch, std::span<const double> lrs,
                         std::uint64_t iteration) {
    Tensor loss = softmax_cross_entropy(model.forward(batch.images, Mode::train), batch.labels);
    const double value = loss.item();
    if (!std::isfinite(value)) {
        throw DivergenceError("loss became non-finite at iteration " + std::to_string(iteration), iteration);
    }
    model.zero_grad();
    if (loss.requires_grad()) loss.backward();
    auto params = model.parameters();
    adam_step(params, adam, lrs);
    return value;
}

/// Learning-rate multiplier over iterations: constant 1, or cosine with
/// warm restarts between 1 and min_ratio.
class LrMultiplier {
public:
    LrMultiplier() = default;
    LrMultiplier(std::size_t cycle_iters, std::size_t cycle_mult, double min_ratio)
        : enabled_(true), cosine_{1.0, min_ratio, cycle_iters, cycle_mult, 0} {
        cosine_.validate();
    }
    double next() { return enabled_ ? cosine_.next() : 1.0; }

private:
    bool enabled_ = false;
    CosineRestartSchedule cosine_{1.0, 1.0, 1, 1, 0};
};

/// Probe for the LR range test: trains a private copy of the model with a
/// fresh Adam state on successive training batches.
class ModelLrProbe {
public:
    ModelLrProbe(const Model& model, const BatchStream& stream) : model_(model), stream_(&stream) {}

    void save() { saved_ = model_; }
    void restore() {
        if (saved_) model_ = *saved_;
        adam_ = AdamState{};
        epoch_ = 0;
        batches_.clear();
        cursor_ = 0;
    }

    double step(double lr) {
        if (cursor_ == batches_.size()) {
            batches_ = stream_->epoch(epoch_++);
            cursor_ = 0;
        }
        const std::vector<double> lrs(model_.group_count(), lr);
        try {
            return train_step(model_, adam_, batches_[cursor_++], lrs, adam_.t);
        } catch (const DivergenceError&) {
            return std::numeric_limits<double>::infinity();
        }
    }

    const Model& model() const { return model_; }

private:
    Model model_;
    std::optional<Model> saved_;
    const BatchStream* stream_;
    AdamState adam_;
    std::size_t epoch_ = 0;
    std::vector<Batch> batches_;
    std::size_t cursor_ = 0;
};

}  // namespace xferlab
