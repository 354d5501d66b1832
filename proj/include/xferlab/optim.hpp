#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xferlab/error.hpp"
#include "xferlab/model.hpp"

namespace xferlab {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments per parameter slot, plus the step counter.
struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    AdamState() = default;
    explicit AdamState(AdamConfig c) : config(c) {}
};

namespace detail {

inline void check_finite_grads(std::span<const ParamSlot> params, std::uint64_t step) {
    for (const auto& p : params) {
        if (!p.trainable || !p.value.has_grad()) continue;
        for (double g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw DivergenceError("non-finite gradient in '" + p.name + "'", static_cast<std::size_t>(step));
            }
        }
    }
}

inline void check_group_lrs(std::span<const ParamSlot> params, std::span<const double> lr_per_group) {
    for (const auto& p : params) {
        if (p.group >= lr_per_group.size()) {
            throw ConfigError("no learning rate for group " + std::to_string(p.group) + " of '" + p.name + "'");
        }
    }
    for (double lr : lr_per_group)
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and >= 0");
}

}  // namespace detail

/// One Adam update over every trainable slot. Slots of frozen groups are
/// skipped entirely, moments included. Gradients are read from each
/// parameter's accumulator; a non-finite gradient aborts the whole step
/// before anything is modified.
inline void adam_step(std::span<const ParamSlot> params, AdamState& state, std::span<const double> lr_per_group) {
    detail::check_group_lrs(params, lr_per_group);
    detail::check_finite_grads(params, state.t + 1);
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    } else if (state.m.size() != params.size()) {
        throw DimensionError("adam state tracks " + std::to_string(state.m.size()) + " slots, got " +
                             std::to_string(params.size()));
    }
    state.t += 1;
    const auto& c = state.config;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& slot = params[i];
        if (!slot.trainable) continue;
        Tensor value = slot.value;
        auto w = value.data();
        if (state.m[i].size() != w.size()) {
            state.m[i].assign(w.size(), 0.0);
            state.v[i].assign(w.size(), 0.0);
        }
        if (!value.has_grad()) continue;
        const auto g = value.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const double lr = lr_per_group[slot.group];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bias1;
            const double vhat = v[j] / bias2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

/// Plain gradient descent: w -= lr * g on trainable slots.
inline void sgd_step(std::span<const ParamSlot> params, std::span<const double> lr_per_group,
                     std::uint64_t step = 0) {
    detail::check_group_lrs(params, lr_per_group);
    detail::check_finite_grads(params, step);
    for (const auto& slot : params) {
        if (!slot.trainable || !slot.value.has_grad()) continue;
        Tensor value = slot.value;
        auto w = value.data();
        const auto g = value.grad();
        const double lr = lr_per_group[slot.group];
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
    }
}

}  // namespace xferlab
