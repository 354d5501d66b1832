#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "xferlab/error.hpp"
#include "xferlab/io.hpp"
#include "xferlab/tensor.hpp"

namespace xferlab {

/// Single-channel 8-bit raster as decoded from a PGM file.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

/// Parses binary PGM (P5) with maxval <= 255. Comments are allowed in the
/// header. `source` labels error messages.
inline GrayImage decode_pgm(std::string_view bytes, const std::string& source) {
    std::size_t pos = 0;
    auto fail = [&source](const std::string& why) -> DataError {
        return DataError("malformed PGM " + source + ": " + why);
    };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> std::size_t {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            throw fail("expected an integer in the header");
        }
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
            if (v > 1u << 24) throw fail("header value too large");
        }
        return v;
    };
    if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") throw fail("missing P5 magic");
    pos = 2;
    GrayImage img;
    img.width = read_uint();
    img.height = read_uint();
    const std::size_t maxval = read_uint();
    if (img.width == 0 || img.height == 0) throw fail("zero dimension");
    if (maxval == 0 || maxval > 255) throw fail("only 8-bit maxval (1..255) is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw fail("missing whitespace after header");
    }
    ++pos;
    const std::size_t n = img.width * img.height;
    if (bytes.size() - pos < n) throw fail("pixel data truncated");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    if (maxval != 255) {
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(255.0 * std::min<double>(p, maxval) / maxval));
    }
    return img;
}

inline std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError&) {
        throw DataError("unreadable PGM " + path.string());
    }
    return decode_pgm(bytes, path.string());
}

/// Bilinear sample of plane `src` (h x w) at continuous pixel coordinates;
/// points outside the grid read as zero.
inline double sample_bilinear(const double* src, std::size_t h, std::size_t w, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
    const double dy = y - fy, dx = x - fx;
    auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w)) return 0.0;
        return src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
    };
    double v = 0.0;
    if (dy != 1.0 && dx != 1.0) v += (1 - dy) * (1 - dx) * at(y0, x0);
    if (dx != 0.0) v += (1 - dy) * dx * at(y0, x0 + 1);
    if (dy != 0.0) v += dy * (1 - dx) * at(y0 + 1, x0);
    if (dy != 0.0 && dx != 0.0) v += dy * dx * at(y0 + 1, x0 + 1);
    return v;
}

/// Bilinear resize of a C x H x W image, pixel-center aligned with edge clamping.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h == out_h && w == out_w) return img.clone();
    Tensor out(Shape{c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = img.data().data() + ch * h * w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const double yy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            for (std::size_t x = 0; x < out_w; ++x) {
                const double xx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                out[(ch * out_h + y) * out_w + x] = sample_bilinear(src, h, w, yy, xx);
            }
        }
    }
    return out;
}

/// Rotation about the image center by `degrees` (counter-clockwise),
/// bilinear resampling, zero fill where the source falls outside.
inline Tensor rotate(const Tensor& img, double degrees) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const double a = degrees * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor out(Shape{c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = img.data().data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                // inverse map: rotate the destination point back by -a
                const double sx = ca * dx - sa * dy + cx;
                const double sy = sa * dx + ca * dy + cy;
                out[(ch * h + y) * w + x] = sample_bilinear(src, h, w, sy, sx);
            }
        }
    }
    return out;
}

/// Center crop by factor `zoom` >= 1 followed by a resize back to H x W.
inline Tensor center_zoom(const Tensor& img, double zoom) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (zoom == 1.0) return img.clone();
    Tensor out(Shape{c, h, w});
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = img.data().data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double sy = cy + (static_cast<double>(y) - cy) / zoom;
                const double sx = cx + (static_cast<double>(x) - cx) / zoom;
                out[(ch * h + y) * w + x] = sample_bilinear(src, h, w, sy, sx);
            }
    }
    return out;
}

inline Tensor flip_horizontal(const Tensor& img) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out(Shape{c, h, w});
    for (std::size_t p = 0; p < c * h; ++p)
        for (std::size_t x = 0; x < w; ++x) out[p * w + x] = img[p * w + (w - 1 - x)];
    return out;
}

inline Tensor flip_vertical(const Tensor& img) {
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out(Shape{c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = img[(ch * h + (h - 1 - y)) * w + x];
    return out;
}

/// 8-bit plane -> 1 x H x W tensor scaled to [0, 1].
inline Tensor to_tensor(const GrayImage& img) {
    Tensor t(Shape{1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<double>(img.pixels[i]) / 255.0;
    return t;
}

/// First channel of a [0, 1] tensor quantized to 8 bits.
inline GrayImage to_gray(const Tensor& t) {
    GrayImage img{t.dim(2), t.dim(1), {}};
    img.pixels.resize(img.width * img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
    return img;
}

}  // namespace xferlab
