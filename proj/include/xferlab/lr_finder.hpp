#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xferlab/error.hpp"

namespace xferlab {

struct LrFinderConfig {
    double lr_lo = 1e-7;
    double lr_hi = 10.0;
    std::size_t num_iters = 100;
    double smoothing = 0.98;        // EMA coefficient beta
    double divergence_factor = 4.0; // stop once smoothed > factor * best
};

struct LrFinderPoint {
    std::size_t iter;
    double lr;
    double raw_loss;
    double smoothed_loss;
};

struct LrFinderTrace {
    std::vector<LrFinderPoint> points;
    std::optional<std::size_t> divergence_index;
    double suggested_lr = 0.0;
};

/// Something the finder can train one step at a time and then roll back.
///
/// step(lr) performs one optimization step at `lr` and returns the loss
/// measured before the update (a non-finite value signals blow-up).
template <class P>
concept LrProbe = requires(P p, double lr) {
    p.save();
    p.restore();
    { p.step(lr) } -> std::convertible_to<double>;
};

/// lr for sweep position i of n: lo * (hi/lo)^(i/(n-1)).
inline double sweep_lr(const LrFinderConfig& cfg, std::size_t i) {
    const double t = static_cast<double>(i) / static_cast<double>(cfg.num_iters - 1);
    if (i == 0) return cfg.lr_lo;
    if (i + 1 == cfg.num_iters) return cfg.lr_hi;
    return cfg.lr_lo * std::pow(cfg.lr_hi / cfg.lr_lo, t);
}

inline void validate(const LrFinderConfig& cfg) {
    if (!(cfg.lr_lo > 0.0) || !(cfg.lr_lo < cfg.lr_hi)) throw ConfigError("lr finder needs 0 < lr_lo < lr_hi");
    if (cfg.num_iters < 2) throw ConfigError("lr finder needs at least 2 iterations");
    if (!(cfg.smoothing >= 0.0 && cfg.smoothing < 1.0)) throw ConfigError("lr finder smoothing must be in [0, 1)");
    if (!(cfg.divergence_factor > 1.0)) throw ConfigError("lr finder divergence factor must exceed 1");
}

/// Picks the rate where the smoothed loss falls fastest against log(lr),
/// using central differences on interior points before any divergence.
/// Falls back to (lr at minimum smoothed loss) / 10 when the curve never
/// descends.
inline double suggest_lr(const LrFinderTrace& trace) {
    const auto& pts = trace.points;
    const std::size_t usable = trace.divergence_index ? *trace.divergence_index : pts.size();
    double best_slope = 0.0;
    std::optional<std::size_t> best;
    for (std::size_t i = 1; i + 1 < usable; ++i) {
        const double dl = pts[i + 1].smoothed_loss - pts[i - 1].smoothed_loss;
        const double dx = std::log(pts[i + 1].lr) - std::log(pts[i - 1].lr);
        const double slope = dl / dx;
        // ignore rounding-level wiggle on flat stretches
        if (!(dl < -1e-12 * std::abs(pts[i].smoothed_loss))) continue;
        if (std::isfinite(slope) && slope < best_slope) {
            best_slope = slope;
            best = i;
        }
    }
    if (best) return pts[*best].lr;
    std::size_t argmin = 0;
    for (std::size_t i = 1; i < usable && i < pts.size(); ++i)
        if (pts[i].smoothed_loss < pts[argmin].smoothed_loss * (1.0 - 1e-12)) argmin = i;
    return pts.empty() ? 0.0 : pts[argmin].lr / 10.0;
}

/// Geometric learning-rate sweep, one training step per rate.
///
/// The loss is smoothed with a bias-corrected exponential moving average.
/// The sweep stops at the first point whose smoothed loss exceeds
/// divergence_factor times the best smoothed loss so far (or is non-finite);
/// that point is kept as the last entry and recorded as divergence_index.
/// The probe is restored to its entry state before returning.
template <LrProbe Probe>
LrFinderTrace lr_range_test(Probe& probe, const LrFinderConfig& cfg) {
    validate(cfg);
    probe.save();
    LrFinderTrace trace;
    try {
        double avg = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cfg.num_iters; ++i) {
            const double lr = sweep_lr(cfg, i);
            const double loss = static_cast<double>(probe.step(lr));
            if (i == 0 && !std::isfinite(loss)) {
                std::ostringstream os;
                os << "loss is non-finite at the first sweep step; lr_lo=" << cfg.lr_lo << " is too high";
                throw DivergenceError(os.str(), 0);
            }
            avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
            const double smoothed = avg / (1.0 - std::pow(cfg.smoothing, static_cast<double>(i + 1)));
            trace.points.push_back({i, lr, loss, smoothed});
            if (!std::isfinite(smoothed) || (i > 0 && smoothed > cfg.divergence_factor * best)) {
                trace.divergence_index = i;
                break;
            }
            if (smoothed < best) best = smoothed;
        }
    } catch (...) {
        probe.restore();
        throw;
    }
    probe.restore();
    trace.suggested_lr = suggest_lr(trace);
    return trace;
}

/// CSV with header `iter,lr,raw_loss,smoothed_loss`.
inline std::string to_csv(const LrFinderTrace& trace) {
    std::ostringstream os;
    os.precision(17);
    os << "iter,lr,raw_loss,smoothed_loss\n";
    for (const auto& p : trace.points) os << p.iter << ',' << p.lr << ',' << p.raw_loss << ',' << p.smoothed_loss << '\n';
    return os.str();
}

}  // namespace xferlab
