#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xferlab/error.hpp"
#include "xferlab/layers.hpp"
#include "xferlab/rng.hpp"

namespace xferlab {

struct InputShape {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;

    bool operator==(const InputShape&) const = default;
};

/// Contiguous block of layers sharing a trainable flag and a learning rate.
struct LayerGroup {
    std::string name;
    std::vector<std::unique_ptr<Layer>> layers;
    bool trainable = true;
    double learning_rate = 1e-3;

    LayerGroup() = default;
    LayerGroup(std::string n, bool t, double lr) : name(std::move(n)), trainable(t), learning_rate(lr) {}
    LayerGroup(LayerGroup&&) noexcept = default;
    LayerGroup& operator=(LayerGroup&&) noexcept = default;

    LayerGroup(const LayerGroup& o) : name(o.name), trainable(o.trainable), learning_rate(o.learning_rate) {
        layers.reserve(o.layers.size());
        for (const auto& l : o.layers) layers.push_back(l->clone());
    }

    LayerGroup& operator=(const LayerGroup& o) {
        if (this != &o) *this = LayerGroup(o);
        return *this;
    }
};

/// A parameter tensor together with the group it belongs to.
struct ParamSlot {
    std::string name;
    Tensor value;
    std::size_t group;
    bool trainable;
};

/// Architecture descriptor sufficient to rebuild an empty model.
struct ModelSpec {
    InputShape input;
    std::size_t num_classes = 2;
    std::size_t width = 8;

    bool operator==(const ModelSpec&) const = default;
};

inline constexpr const char* kHeadGroup = "head";

/// Ordered layer groups, base groups first and exactly one trailing head.
/// Copies are deep: parameters and running statistics are duplicated.
class Model {
public:
    Model(ModelSpec spec, std::vector<LayerGroup> groups) : spec_(spec), groups_(std::move(groups)) {
        if (groups_.empty() || groups_.back().name != kHeadGroup) {
            throw ConfigError("model must end with a single group named 'head'");
        }
        for (std::size_t i = 0; i + 1 < groups_.size(); ++i) {
            if (groups_[i].name == kHeadGroup) throw ConfigError("only the last group may be the head");
        }
    }

    const ModelSpec& spec() const { return spec_; }
    std::size_t num_classes() const { return spec_.num_classes; }

    std::size_t group_count() const { return groups_.size(); }
    LayerGroup& group(std::size_t i) { return groups_.at(i); }
    const LayerGroup& group(std::size_t i) const { return groups_.at(i); }

    std::size_t group_index(const std::string& name) const {
        for (std::size_t i = 0; i < groups_.size(); ++i)
            if (groups_[i].name == name) return i;
        throw ConfigError("unknown layer group '" + name + "'");
    }

    std::vector<std::string> group_names() const {
        std::vector<std::string> out;
        for (const auto& g : groups_) out.push_back(g.name);
        return out;
    }

    LayerGroup& head() { return groups_.back(); }
    const LayerGroup& head() const { return groups_.back(); }

    /// Runs every group; output is N x num_classes.
    Tensor forward(const Tensor& x, Mode mode) { return run(x, mode, groups_.size()); }

    /// Activations entering the head group.
    Tensor features(const Tensor& x, Mode mode) { return run(x, mode, groups_.size() - 1); }

    /// Evaluation-mode scores without graph recording. Evaluation never
    /// mutates layer state, so this is safe on a shared const model.
    Tensor predict(const Tensor& x) const {
        NoGradGuard guard;
        return const_cast<Model*>(this)->run(x, Mode::eval, groups_.size());
    }

    Tensor predict_features(const Tensor& x) const {
        NoGradGuard guard;
        return const_cast<Model*>(this)->run(x, Mode::eval, groups_.size() - 1);
    }

    std::vector<ParamSlot> parameters() {
        std::vector<ParamSlot> out;
        for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
            std::vector<NamedTensor> params;
            std::vector<NamedBuffer> buffers;
            collect_group(gi, params, buffers);
            for (auto& p : params) out.push_back({std::move(p.name), p.value, gi, groups_[gi].trainable});
        }
        return out;
    }

    std::vector<NamedBuffer> buffers() {
        std::vector<NamedBuffer> out;
        for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
            std::vector<NamedTensor> params;
            collect_group(gi, params, out);
        }
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.value.zero_grad();
    }

    /// Sets the trainable flag on the named groups. Parameters of frozen
    /// groups stop requiring gradients, so no graph is recorded for them.
    void set_trainable(std::span<const std::string> names, bool flag) {
        std::vector<std::size_t> idx;
        for (const auto& n : names) idx.push_back(group_index(n));
        for (auto i : idx) apply_trainable(i, flag);
    }

    void set_all_trainable(bool flag) {
        for (std::size_t i = 0; i < groups_.size(); ++i) apply_trainable(i, flag);
    }

    /// Freezes every base group and leaves the head trainable.
    void freeze_base() {
        for (std::size_t i = 0; i + 1 < groups_.size(); ++i) apply_trainable(i, false);
        apply_trainable(groups_.size() - 1, true);
    }

    /// Per-group rates; must be non-decreasing from base to head.
    void set_learning_rates(std::span<const double> lrs) {
        if (lrs.size() != groups_.size()) {
            throw ConfigError("expected " + std::to_string(groups_.size()) + " group learning rates, got " +
                              std::to_string(lrs.size()));
        }
        for (std::size_t i = 0; i < lrs.size(); ++i) {
            if (!(lrs[i] >= 0.0)) throw ConfigError("learning rates must be non-negative");
            if (i > 0 && lrs[i] < lrs[i - 1]) {
                throw ConfigError("group learning rates must be non-decreasing from base to head");
            }
        }
        for (std::size_t i = 0; i < lrs.size(); ++i) groups_[i].learning_rate = lrs[i];
    }

    std::vector<double> learning_rates() const {
        std::vector<double> out;
        for (const auto& g : groups_) out.push_back(g.learning_rate);
        return out;
    }

    /// FNV-1a over the raw bytes of a group's parameters and running stats.
    std::uint64_t checksum(std::size_t group_idx) {
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        collect_group(group_idx, params, buffers);
        std::uint64_t h = 1469598103934665603ULL;
        auto feed = [&h](std::span<const double> values) {
            for (double v : values) {
                unsigned char bytes[sizeof(double)];
                std::memcpy(bytes, &v, sizeof v);
                for (unsigned char b : bytes) {
                    h ^= b;
                    h *= 1099511628211ULL;
                }
            }
        };
        for (const auto& p : params) feed(p.value.data());
        for (const auto& b : buffers) feed(*b.values);
        return h;
    }

    std::uint64_t base_checksum() {
        std::uint64_t h = 0;
        for (std::size_t i = 0; i + 1 < groups_.size(); ++i) h = mix64(h ^ checksum(i));
        return h;
    }

    /// Swaps in a freshly initialized dense classifier with `k` outputs.
    /// Base groups and their running statistics are untouched.
    void replace_head(std::size_t k, std::uint64_t seed);

private:
    Tensor run(const Tensor& x, Mode mode, std::size_t upto) {
        Tensor h = x;
        for (std::size_t gi = 0; gi < upto; ++gi) {
            const ForwardContext ctx{mode, !groups_[gi].trainable};
            for (auto& layer : groups_[gi].layers) h = layer->forward(h, ctx);
        }
        return h;
    }

    void collect_group(std::size_t gi, std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers) {
        const std::string prefix = groups_.at(gi).name + ".";
        for (auto& layer : groups_[gi].layers) layer->collect(prefix, params, buffers);
    }

    void apply_trainable(std::size_t gi, bool flag) {
        groups_[gi].trainable = flag;
        std::vector<NamedTensor> params;
        std::vector<NamedBuffer> buffers;
        collect_group(gi, params, buffers);
        for (auto& p : params) p.value.set_requires_grad(flag);
    }

    ModelSpec spec_;
    std::vector<LayerGroup> groups_;
};

namespace detail {

inline constexpr double kHeadInitScale = 0.01;

inline LayerGroup make_head(std::size_t features, std::size_t k, std::uint64_t seed) {
    LayerGroup head(kHeadGroup, true, 1e-3);
    head.layers.push_back(std::make_unique<Pool2d>("gap", PoolType::global_average));
    auto dense = std::make_unique<Dense>("fc", features, k);
    Rng rng(derive_seed(seed, {0x4845'4144ULL}));
    dense->init_uniform(rng, kHeadInitScale);
    head.layers.push_back(std::move(dense));
    return head;
}

}  // namespace detail

inline void Model::replace_head(std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("classifier head needs at least 2 classes");
    const auto* old = dynamic_cast<const Dense*>(groups_.back().layers.back().get());
    if (old == nullptr) throw ConfigError("head group does not end with a dense layer");
    LayerGroup fresh = detail::make_head(old->in_features(), k, seed);
    fresh.trainable = groups_.back().trainable;
    fresh.learning_rate = groups_.back().learning_rate;
    groups_.back() = std::move(fresh);
    apply_trainable(groups_.size() - 1, groups_.back().trainable);
    spec_.num_classes = k;
}

/// Builds the micro residual CNN:
///
///   stem   : conv3x3(C -> w), BN, ReLU
///   stage1 : 2 residual blocks at w channels, H x W
///   stage2 : maxpool 2, conv1x1(w -> 2w), BN, ReLU, 2 residual blocks
///   stage3 : maxpool 2, conv1x1(2w -> 4w), BN, ReLU, 2 residual blocks
///   head   : global average pool, dense(4w -> K)
inline Model build_micro_resnet(const InputShape& input, std::size_t num_classes, std::size_t width,
                                std::uint64_t seed) {
    if (input.height < 16 || input.width < 16) {
        throw ConfigError("input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                          " is too small for the pooling pyramid (need at least 16x16)");
    }
    if (input.channels < 1) throw ConfigError("input needs at least one channel");
    if (num_classes < 2) throw ConfigError("need at least 2 classes");
    if (width < 1) throw ConfigError("width multiplier must be >= 1");

    Rng rng(derive_seed(seed, {0x4d4f'4445'4cULL}));
    std::vector<LayerGroup> groups;

    LayerGroup stem("stem", true, 1e-3);
    {
        auto conv = std::make_unique<Conv2d>("conv", input.channels, width, 3, Conv2dOptions{1, 1});
        conv->init_he(rng);
        stem.layers.push_back(std::move(conv));
        stem.layers.push_back(std::make_unique<BatchNorm2d>("bn", width));
        stem.layers.push_back(std::make_unique<Relu>("relu"));
    }
    groups.push_back(std::move(stem));

    std::size_t channels = width;
    for (int s = 1; s <= 3; ++s) {
        LayerGroup stage("stage" + std::to_string(s), true, 1e-3);
        if (s > 1) {
            const std::size_t next = channels * 2;
            stage.layers.push_back(std::make_unique<Pool2d>("pool", PoolType::max, 2, 2));
            auto proj = std::make_unique<Conv2d>("proj", channels, next, 1, Conv2dOptions{1, 0});
            proj->init_he(rng);
            stage.layers.push_back(std::move(proj));
            stage.layers.push_back(std::make_unique<BatchNorm2d>("proj_bn", next));
            stage.layers.push_back(std::make_unique<Relu>("proj_relu"));
            channels = next;
        }
        for (int b = 0; b < 2; ++b) {
            auto block = std::make_unique<ResidualBlock>("block" + std::to_string(b), channels);
            block->init_he(rng);
            stage.layers.push_back(std::move(block));
        }
        groups.push_back(std::move(stage));
    }

    groups.push_back(detail::make_head(channels, num_classes, derive_seed(seed, {1})));
    return Model(ModelSpec{input, num_classes, width}, std::move(groups));
}

/// Copy of `model` with a fresh K'-way head.
inline Model replace_head(const Model& model, std::size_t new_num_classes, std::uint64_t seed) {
    Model out(model);
    out.replace_head(new_num_classes, seed);
    return out;
}

/// Convenience wrapper over Model::set_trainable.
inline void set_trainable(Model& model, std::span<const std::string> group_names, bool flag) {
    model.set_trainable(group_names, flag);
}

}  // namespace xferlab
