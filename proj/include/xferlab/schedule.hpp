#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "xferlab/error.hpp"

namespace xferlab {

/// Cosine annealing with warm restarts, stepped once per iteration.
struct CosineRestartSchedule {
    double lr_max = 1e-3;
    double lr_min = 1e-5;
    std::size_t cycle_length = 1;  // T_i, in iterations
    std::size_t cycle_mult = 1;
    std::size_t position = 0;      // T_cur

    void validate() const {
        if (!(lr_min > 0.0) || !(lr_min < lr_max)) {
            throw ConfigError("cosine schedule needs 0 < lr_min < lr_max");
        }
        if (cycle_length < 1) throw ConfigError("cosine cycle length must be >= 1");
        if (cycle_mult < 1) throw ConfigError("cosine cycle multiplier must be >= 1");
    }

    /// Rate at the current position, then advance. Reaching the end of a
    /// cycle starts the next one (length scaled by cycle_mult) at lr_max.
    double next() {
        const double lr = cosine_lr(*this, position);
        if (++position >= cycle_length) {
            position = 0;
            cycle_length *= cycle_mult;
        }
        return lr;
    }

    friend double cosine_lr(const CosineRestartSchedule& s, std::size_t t_cur) {
        if (t_cur > s.cycle_length) {
            throw ScheduleStateError("cosine position " + std::to_string(t_cur) + " beyond cycle length " +
                                     std::to_string(s.cycle_length));
        }
        const double frac = static_cast<double>(t_cur) / static_cast<double>(s.cycle_length);
        return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
    }
};

/// Discriminative learning-rate range across G layer groups.
struct LrSlice {
    double lo = 1e-6;
    double hi = 1e-3;
    std::size_t group_count = 1;
};

/// Geometrically spaced per-group rates: lo for the earliest group, hi for
/// the head. Endpoints are returned exactly.
inline std::vector<double> slice_lrs(const LrSlice& s) {
    if (!(s.lo > 0.0) || !(s.hi > 0.0)) throw ConfigError("slice bounds must be positive");
    if (s.lo > s.hi) throw ConfigError("slice lower bound exceeds upper bound");
    if (s.group_count < 1) throw ConfigError("slice needs at least one group");
    if (s.group_count == 1) {
        if (s.lo != s.hi) throw ConfigError("a single-group slice requires lo == hi");
        return {s.lo};
    }
    std::vector<double> out(s.group_count);
    const double ratio = s.hi / s.lo;
    const double last = static_cast<double>(s.group_count - 1);
    for (std::size_t g = 0; g < s.group_count; ++g) {
        out[g] = s.lo * std::pow(ratio, static_cast<double>(g) / last);
    }
    out.front() = s.lo;
    out.back() = s.hi;
    return out;
}

}  // namespace xferlab
