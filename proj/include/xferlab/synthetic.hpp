#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "xferlab/dataset.hpp"
#include "xferlab/error.hpp"
#include "xferlab/rng.hpp"

namespace xferlab {

namespace synth {

struct Vec2 {
    double x, y;
};

inline double length(Vec2 p) { return std::hypot(p.x, p.y); }

inline double sd_box(Vec2 p, double hx, double hy) {
    const double dx = std::abs(p.x) - hx, dy = std::abs(p.y) - hy;
    return std::hypot(std::max(dx, 0.0), std::max(dy, 0.0)) + std::min(std::max(dx, dy), 0.0);
}

// approximate (not exact) distance; good enough for anti-aliased fill
inline double sd_ellipse(Vec2 p, double rx, double ry) {
    const double k = length({p.x / rx, p.y / ry});
    return (k - 1.0) * std::min(rx, ry);
}

inline double sd_circle(Vec2 p, double r) { return length(p) - r; }

inline double sd_triangle(Vec2 p, double r) {
    // equilateral with apex toward negative y (up in image rows)
    const double k = std::sqrt(3.0);
    p.y = -p.y;
    p.x = std::abs(p.x) - r;
    p.y = p.y + r / k;
    if (p.x + k * p.y > 0.0) p = {(p.x - k * p.y) / 2.0, (-k * p.x - p.y) / 2.0};
    p.x -= std::clamp(p.x, -2.0 * r, 0.0);
    return p.y > 0.0 ? -length(p) : length(p);
}

inline double sd_hexagon(Vec2 p, double r) {
    const double kx = -0.866025404, ky = 0.5, kz = 0.577350269;
    p = {std::abs(p.x), std::abs(p.y)};
    const double d = 2.0 * std::min(kx * p.x + ky * p.y, 0.0);
    p.x -= d * kx;
    p.y -= d * ky;
    p.x -= std::clamp(p.x, -kz * r, kz * r);
    p.y -= r;
    return length(p) * (p.y > 0.0 ? 1.0 : -1.0);
}

inline Vec2 rotated(Vec2 p, double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

inline constexpr std::array<const char*, 12> kPrimitiveNames{
    "ellipse", "rectangle", "annulus", "cross", "triangle", "diamond",
    "saltire", "bars", "dots", "elbow", "crescent", "hexagon"};

inline constexpr std::array<const char*, 4> kVariantNames{"", "_outline", "_pair", "_holed"};

/// Signed distance of primitive `prim` in a unit frame (shape radius ~0.9).
inline double primitive_sdf(std::size_t prim, Vec2 p) {
    switch (prim) {
        case 0: return sd_ellipse(p, 0.95, 0.55);
        case 1: return sd_box(p, 0.85, 0.55);
        case 2: return std::abs(sd_circle(p, 0.65)) - 0.22;
        case 3: return std::min(sd_box(p, 0.9, 0.22), sd_box(p, 0.22, 0.9));
        case 4: return sd_triangle({p.x, p.y - 0.15}, 0.95);
        case 5: return (std::abs(p.x) / 0.95 + std::abs(p.y) / 0.75 - 1.0) * 0.6;
        case 6: {
            const Vec2 q = rotated(p, std::numbers::pi / 4.0);
            return std::min(sd_box(q, 0.95, 0.2), sd_box(q, 0.2, 0.95));
        }
        case 7: {
            double d = sd_box({p.x, p.y + 0.6}, 0.85, 0.18);
            d = std::min(d, sd_box(p, 0.85, 0.18));
            return std::min(d, sd_box({p.x, p.y - 0.6}, 0.85, 0.18));
        }
        case 8: {
            double d = sd_circle({p.x, p.y + 0.5}, 0.32);
            d = std::min(d, sd_circle({p.x - 0.52, p.y - 0.38}, 0.32));
            return std::min(d, sd_circle({p.x + 0.52, p.y - 0.38}, 0.32));
        }
        case 9: return std::min(sd_box({p.x + 0.55, p.y}, 0.22, 0.85), sd_box({p.x, p.y - 0.63}, 0.77, 0.22));
        case 10: return std::max(sd_circle(p, 0.85), -sd_circle({p.x - 0.45, p.y}, 0.65));
        case 11: return sd_hexagon(p, 0.8);
        default: throw ConfigError("unknown shape primitive " + std::to_string(prim));
    }
}

/// Family = primitive + 12 * variant. Variants: filled, outline, two small
/// copies side by side, filled with a round hole.
inline double family_sdf(std::size_t family, Vec2 p) {
    const std::size_t prim = family % kPrimitiveNames.size();
    switch (family / kPrimitiveNames.size()) {
        case 0: return primitive_sdf(prim, p);
        case 1: return std::abs(primitive_sdf(prim, p)) - 0.12;
        case 2: {
            const double s = 0.5;
            const double a = primitive_sdf(prim, {(p.x + 0.5) / s, p.y / s}) * s;
            const double b = primitive_sdf(prim, {(p.x - 0.5) / s, p.y / s}) * s;
            return std::min(a, b);
        }
        case 3: return std::max(primitive_sdf(prim, p), -sd_circle(p, 0.3));
        default: throw ConfigError("unknown shape family " + std::to_string(family));
    }
}

}  // namespace synth

inline constexpr std::size_t kSyntheticFamilyCount = synth::kPrimitiveNames.size() * synth::kVariantNames.size();

inline std::string synthetic_family_name(std::size_t family) {
    if (family >= kSyntheticFamilyCount) throw ConfigError("shape family index " + std::to_string(family) + " out of range");
    return std::string(synth::kPrimitiveNames[family % synth::kPrimitiveNames.size()]) +
           synth::kVariantNames[family / synth::kPrimitiveNames.size()];
}

/// One grayscale rendering of `family` with jittered pose, size, contrast
/// and additive noise, clamped to [0, 1]. Pure function of its arguments.
inline Tensor render_shape(std::size_t family, std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    const double half = static_cast<double>(size) / 2.0;
    const double scale = half * rng.uniform(0.55, 0.8);
    const double cx = half + rng.uniform(-0.15, 0.15) * half;
    const double cy = half + rng.uniform(-0.15, 0.15) * half;
    const double angle = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
    const double background = rng.uniform(0.0, 0.25);
    const double foreground = rng.uniform(0.6, 1.0);
    const double noise = rng.uniform(0.02, 0.07);
    const double px = 1.0 / scale;  // one pixel in the shape frame
    Tensor img(Shape{1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const synth::Vec2 d{(static_cast<double>(x) + 0.5 - cx) / scale, (static_cast<double>(y) + 0.5 - cy) / scale};
            const double sd = synth::family_sdf(family, synth::rotated(d, -angle));
            const double cover = std::clamp(0.5 - sd / px, 0.0, 1.0);
            const double v = background + (foreground - background) * cover + noise * rng.normal();
            img[y * size + x] = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

/// `counts[i]` renderings of family `families[i]`, labelled i.
inline LabeledDataset make_synthetic_dataset(std::uint64_t seed, const std::vector<std::size_t>& families,
                                             const std::vector<std::size_t>& counts, std::size_t image_size) {
    if (families.size() != counts.size()) throw ConfigError("families and counts differ in length");
    if (image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
    LabeledDataset ds;
    for (std::size_t label = 0; label < families.size(); ++label) {
        const std::size_t fam = families[label];
        ds.class_names.push_back(synthetic_family_name(fam));
        if (counts[label] == 0) throw ConfigError("class " + ds.class_names.back() + " would have no samples");
        for (std::size_t i = 0; i < counts[label]; ++i) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "s%05zu", i);
            ds.samples.push_back({render_shape(fam, image_size, derive_seed(seed, {fam, i})),
                                  label, ds.class_names.back() + "/" + stem});
        }
    }
    return ds;
}

/// Source classes use shape families 0..S-1; the target task uses the
/// held-out families S..S+T-1, rendered with the same jitter model so both
/// corpora share low-level statistics.
inline TransferSetting make_synthetic_transfer_task(std::uint64_t seed, std::size_t source_classes,
                                                    std::size_t target_classes, std::size_t source_per_class,
                                                    std::size_t target_per_class, std::size_t image_size) {
    if (source_classes < 2 || target_classes < 2) throw ConfigError("synthetic task needs at least 2 classes per domain");
    if (source_per_class < 2 || target_per_class < 2) throw ConfigError("synthetic task needs at least 2 samples per class");
    if (source_classes + target_classes > kSyntheticFamilyCount)
        throw ConfigError("synthetic task supports at most " + std::to_string(kSyntheticFamilyCount) +
                          " source + target classes");
    std::vector<std::size_t> src(source_classes), tgt(target_classes);
    for (std::size_t i = 0; i < source_classes; ++i) src[i] = i;
    for (std::size_t i = 0; i < target_classes; ++i) tgt[i] = source_classes + i;
    return {make_synthetic_dataset(derive_seed(seed, {1}), src, std::vector<std::size_t>(source_classes, source_per_class),
                                   image_size),
            make_synthetic_dataset(derive_seed(seed, {2}), tgt, std::vector<std::size_t>(target_classes, target_per_class),
                                   image_size)};
}

inline TransferSetting make_synthetic_transfer_task(std::uint64_t seed, std::size_t source_classes,
                                                    std::size_t target_classes, std::size_t samples_per_class,
                                                    std::size_t image_size) {
    return make_synthetic_transfer_task(seed, source_classes, target_classes, samples_per_class, samples_per_class,
                                        image_size);
}

}  // namespace xferlab
