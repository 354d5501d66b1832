#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xferlab/augment.hpp"
#include "xferlab/dataset.hpp"
#include "xferlab/error.hpp"
#include "xferlab/folds.hpp"
#include "xferlab/rng.hpp"

namespace xferlab {

enum class Split { train, valid };

struct Batch {
    Tensor images;                     // N x C x H x W
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  // dataset positions
};

/// Stacks the listed samples into one batch. When `policy` is set, sample i
/// is augmented with its own stream derived from (seed, epoch, index);
/// standardization by `stats` (if non-empty) follows augmentation.
inline Batch assemble_batch(const LabeledDataset& ds, std::span<const std::size_t> indices,
                            const AugmentPolicy* policy, std::uint64_t seed, std::size_t epoch,
                            const ChannelStats& stats) {
    const InputShape in = ds.input_shape();
    const std::size_t per = in.channels * in.height * in.width;
    Batch b{Tensor(Shape{indices.size(), in.channels, in.height, in.width}), {}, {indices.begin(), indices.end()}};
    b.labels.reserve(indices.size());
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const auto& s = ds.samples.at(indices[n]);
        auto dst = b.images.data().subspan(n * per, per);
        if (policy && !policy->is_identity()) {
            Rng rng(derive_seed(policy->seed, {seed, epoch, indices[n]}));
            const Tensor a = augment(s.image, *policy, rng);
            std::copy(a.data().begin(), a.data().end(), dst.begin());
        } else {
            std::copy(s.image.data().begin(), s.image.data().end(), dst.begin());
        }
        if (!stats.empty()) standardize_image(dst, stats);
        b.labels.push_back(s.label);
    }
    return b;
}

/// Minibatches over one side of a fold. The train side is reshuffled every
/// epoch from (seed, epoch) and optionally augmented; the valid side keeps
/// dataset order and is never augmented. The last partial batch is kept.
class BatchStream {
public:
    BatchStream(const LabeledDataset& ds, const FoldPlan& plan, std::size_t fold, Split split, std::size_t batch_size,
                std::optional<AugmentPolicy> policy, std::uint64_t seed, ChannelStats stats = {})
        : ds_(&ds), split_(split), batch_size_(batch_size), seed_(seed), stats_(std::move(stats)) {
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (plan.fold_of.size() != ds.size()) throw ConfigError("fold plan does not match dataset size");
        indices_ = split == Split::train ? plan.train_indices(fold) : plan.valid_indices(fold);
        if (split == Split::train && policy) {
            policy->validate();
            policy_ = *policy;
        }
        if (!stats_.empty()) stats_ = sanitize_stats(stats_);
    }

    std::size_t size() const noexcept { return indices_.size(); }
    std::size_t batch_count() const noexcept { return (indices_.size() + batch_size_ - 1) / batch_size_; }
    const std::vector<std::size_t>& indices() const noexcept { return indices_; }
    const ChannelStats& stats() const noexcept { return stats_; }
    Split split() const noexcept { return split_; }

    /// Sample order for `epoch`.
    std::vector<std::size_t> order(std::size_t epoch) const {
        std::vector<std::size_t> o = indices_;
        if (split_ == Split::train) {
            Rng rng(derive_seed(seed_, {epoch}));
            rng.shuffle(std::span<std::size_t>(o));
        }
        return o;
    }

    std::vector<Batch> epoch(std::size_t e) const {
        const auto o = order(e);
        std::vector<Batch> out;
        out.reserve(batch_count());
        for (std::size_t start = 0; start < o.size(); start += batch_size_) {
            const std::size_t n = std::min(batch_size_, o.size() - start);
            out.push_back(assemble_batch(*ds_, std::span<const std::size_t>(o).subspan(start, n),
                                         policy_ ? &*policy_ : nullptr, seed_, e, stats_));
        }
        return out;
    }

private:
    const LabeledDataset* ds_;
    Split split_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    ChannelStats stats_;
    std::optional<AugmentPolicy> policy_;
    std::vector<std::size_t> indices_;
};

}  // namespace xferlab
