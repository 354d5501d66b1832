#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xferlab/dataset.hpp"
#include "xferlab/error.hpp"
#include "xferlab/rng.hpp"

namespace xferlab {

struct FoldPlan {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> ids;       // sample ids in dataset order
    std::vector<std::size_t> fold_of;   // parallel to ids

    std::vector<std::size_t> valid_indices(std::size_t fold) const {
        check(fold);
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == fold) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> train_indices(std::size_t fold) const {
        check(fold);
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] != fold) out.push_back(i);
        return out;
    }

    std::size_t fold_size(std::size_t fold) const { return valid_indices(fold).size(); }

private:
    void check(std::size_t fold) const {
        if (fold >= k) throw ConfigError("fold " + std::to_string(fold) + " out of range for k=" + std::to_string(k));
    }
};

/// Per class: seeded shuffle, then round-robin over folds. The starting fold
/// of each class continues where the previous class stopped, which also keeps
/// total fold sizes within one of each other.
inline FoldPlan stratified_kfold(std::span<const std::size_t> labels, std::size_t num_classes, std::size_t k,
                                 std::uint64_t seed) {
    if (k < 2) throw ConfigError("k must be at least 2, got " + std::to_string(k));
    if (k > labels.size())
        throw ConfigError("k=" + std::to_string(k) + " exceeds dataset size " + std::to_string(labels.size()));
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw DataError("label " + std::to_string(labels[i]) + " out of range");
        by_class[labels[i]].push_back(i);
    }
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.fold_of.assign(labels.size(), 0);
    std::size_t offset = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& members = by_class[c];
        Rng rng(derive_seed(seed, {c}));
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t j = 0; j < members.size(); ++j) plan.fold_of[members[j]] = (offset + j) % k;
        offset = (offset + members.size()) % k;
    }
    return plan;
}

inline FoldPlan stratified_kfold(const LabeledDataset& ds, std::size_t k, std::uint64_t seed) {
    const auto labels = ds.labels();
    FoldPlan plan = stratified_kfold(labels, ds.num_classes(), k, seed);
    plan.ids.reserve(ds.size());
    for (const auto& s : ds.samples) plan.ids.push_back(s.id);
    return plan;
}

/// CSV with header `sample_id,fold`.
inline std::string to_csv(const FoldPlan& plan) {
    std::ostringstream os;
    os << "sample_id,fold\n";
    for (std::size_t i = 0; i < plan.fold_of.size(); ++i)
        os << (i < plan.ids.size() ? plan.ids[i] : std::to_string(i)) << ',' << plan.fold_of[i] << '\n';
    return os.str();
}

}  // namespace xferlab
