#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "xferlab/error.hpp"
#include "xferlab/image.hpp"
#include "xferlab/rng.hpp"
#include "xferlab/tensor.hpp"

namespace xferlab {

struct AugmentPolicy {
    double flip_h = 0.0;        // probability
    double flip_v = 0.0;        // probability
    double max_rotate = 0.0;    // degrees
    double max_zoom = 1.0;      // >= 1
    double max_lighting = 0.0;  // brightness and contrast delta
    std::uint64_t seed = 0;

    bool is_identity() const noexcept {
        return flip_h == 0.0 && flip_v == 0.0 && max_rotate == 0.0 && max_zoom == 1.0 && max_lighting == 0.0;
    }

    void validate() const {
        auto prob = [](double p, const char* name) {
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must be in [0, 1]");
        };
        prob(flip_h, "flip_h");
        prob(flip_v, "flip_v");
        if (!(max_rotate >= 0.0 && max_rotate <= 180.0)) throw ConfigError("augment.max_rotate must be in [0, 180]");
        if (!(max_zoom >= 1.0 && max_zoom <= 4.0)) throw ConfigError("augment.max_zoom must be in [1, 4]");
        if (!(max_lighting >= 0.0 && max_lighting < 1.0)) throw ConfigError("augment.max_lighting must be in [0, 1)");
    }
};

namespace detail {
inline void clamp_unit(Tensor& t) {
    for (auto& v : t.data()) v = std::clamp(v, 0.0, 1.0);
}
}  // namespace detail

/// Applies flips, rotation, center zoom and lighting in that order.
/// Every call draws the same number of variates from `rng`, so a knob set to
/// its identity value leaves the stream aligned with other policies.
inline Tensor augment(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
    const bool fh = rng.uniform() < policy.flip_h;
    const bool fv = rng.uniform() < policy.flip_v;
    const double angle = rng.uniform(-policy.max_rotate, policy.max_rotate);
    const double zoom = rng.uniform(1.0, policy.max_zoom);
    const double brightness = rng.uniform(-policy.max_lighting, policy.max_lighting);
    const double contrast = 1.0 + rng.uniform(-policy.max_lighting, policy.max_lighting);

    Tensor out = image.clone();
    if (fh) out = flip_horizontal(out);
    if (fv) out = flip_vertical(out);
    if (angle != 0.0) {
        out = rotate(out, angle);
        detail::clamp_unit(out);
    }
    if (zoom != 1.0) {
        out = center_zoom(out, zoom);
        detail::clamp_unit(out);
    }
    if (policy.max_lighting != 0.0) {
        for (auto& v : out.data()) v = std::clamp((v - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0);
    }
    return out;
}

}  // namespace xferlab
