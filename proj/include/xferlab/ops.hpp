#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xferlab/detail/gemm.hpp"
#include "xferlab/error.hpp"
#include "xferlab/tensor.hpp"

namespace xferlab {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.ndim() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             " tensor, got " + shape_str(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t i = 0; i < 2; ++i) {
            auto g = detail::parent_grad(self, i);
            if (!g.empty()) detail::add_into(g, self.grad);
        }
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (auto ga = detail::parent_grad(self, 0); !ga.empty())
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * y[i];
        if (auto gb = detail::parent_grad(self, 1); !gb.empty())
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * x[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    return detail::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
        auto g = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        const auto& x = self.parents[0]->data;
        auto g = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) g[i] += self.grad[i];
    });
}

/// Sum of all elements as a shape-[1] tensor.
inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result(Shape{1}, {s}, {a}, [](detail::Node& self) {
        auto g = detail::parent_grad(self, 0);
        const double up = self.grad[0];
        for (auto& v : g) v += up;
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
        auto g = detail::parent_grad(self, 0);
        detail::add_into(g, self.grad);
    });
}

/// N x d1 x d2 ... -> N x (d1*d2*...)
inline Tensor flatten(const Tensor& a) {
    if (a.ndim() < 1) throw DimensionError("flatten: scalar input");
    const std::size_t n = a.dim(0);
    return reshape(a, Shape{n, n == 0 ? 0 : a.numel() / n});
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return detail::make_result(Shape{m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (auto ga = detail::parent_grad(self, 0); !ga.empty())
            detail::gemm_nt(m, k, n, self.grad.data(), bv.data(), ga.data());
        if (auto gb = detail::parent_grad(self, 1); !gb.empty())
            detail::gemm_tn(k, n, m, av.data(), self.grad.data(), gb.data());
    });
}

/// x[N x M] + bias[M] broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()));
    }
    const std::size_t n = x.dim(0), m = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto b = bias.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
    return detail::make_result(x.shape(), std::move(out), {x, bias}, [n, m](detail::Node& self) {
        if (auto gx = detail::parent_grad(self, 0); !gx.empty()) detail::add_into(gx, self.grad);
        if (auto gb = detail::parent_grad(self, 1); !gb.empty())
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb[j] += self.grad[i * m + j];
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

namespace detail {

struct ConvGeometry {
    std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t out_plane() const { return oh * ow; }
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) return 0;
    return (in + 2 * pad - k) / stride + 1;
}

// col[(c,ki,kj) x (oy,ox)] for one sample.
inline void im2col(const ConvGeometry& g, const double* img, double* col) {
    const std::size_t plane = g.out_plane();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((ch * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 &&
                                            iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.ow + ox] =
                            inside ? img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w +
                                         static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
        }
    }
}

inline void col2im_add(const ConvGeometry& g, const double* col, double* img) {
    const std::size_t plane = g.out_plane();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((ch * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w +
                            static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip), NCHW input, FCkhkw kernel.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opt = {}) {
    detail::require_rank(input, 4, "conv2d input");
    detail::require_rank(kernel, 4, "conv2d kernel");
    if (input.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d: input " + shape_str(input.shape()) + " and kernel " +
                             shape_str(kernel.shape()) + " disagree on channels");
    }
    if (opt.stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                           kernel.dim(2), kernel.dim(3), opt.stride, opt.padding, 0, 0};
    g.oh = detail::conv_out_dim(g.h, g.kh, g.stride, g.pad);
    g.ow = detail::conv_out_dim(g.w, g.kw, g.stride, g.pad);
    if (g.oh == 0 || g.ow == 0) {
        throw ConfigError("conv2d: kernel " + shape_str(kernel.shape()) +
                          " does not fit padded input " + shape_str(input.shape()));
    }

    const std::size_t patch = g.patch(), plane = g.out_plane();
    const bool keep_cols = grad_enabled() && kernel.requires_grad();
    std::vector<double> cols(keep_cols ? g.n * patch * plane : patch * plane);
    std::vector<double> out(g.n * g.f * plane, 0.0);
    const double* x = input.data().data();
    const double* k = kernel.data().data();
    for (std::size_t s = 0; s < g.n; ++s) {
        double* col = cols.data() + (keep_cols ? s * patch * plane : 0);
        detail::im2col(g, x + s * g.c * g.h * g.w, col);
        detail::gemm_nn(g.f, plane, patch, k, col, out.data() + s * g.f * plane);
    }
    if (!keep_cols) cols.clear();

    return detail::make_result(
        Shape{g.n, g.f, g.oh, g.ow}, std::move(out), {input, kernel},
        [g, cols = std::move(cols)](detail::Node& self) {
            const std::size_t patch = g.patch(), plane = g.out_plane();
            const auto& kv = self.parents[1]->data;
            auto gin = detail::parent_grad(self, 0);
            auto gk = detail::parent_grad(self, 1);
            std::vector<double> dcol(gin.empty() ? 0 : patch * plane);
            for (std::size_t s = 0; s < g.n; ++s) {
                const double* dout = self.grad.data() + s * g.f * plane;
                if (!gk.empty()) detail::gemm_nt(g.f, patch, plane, dout, cols.data() + s * patch * plane, gk.data());
                if (!gin.empty()) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    detail::gemm_tn(patch, plane, g.f, kv.data(), dout, dcol.data());
                    detail::col2im_add(g, dcol.data(), gin.data() + s * g.c * g.h * g.w);
                }
            }
        });
}

namespace detail {

struct PoolGeometry {
    std::size_t n, c, h, w, k, stride, oh, ow;
};

inline PoolGeometry pool_geometry(const Tensor& x, std::size_t k, std::size_t stride, const char* op) {
    require_rank(x, 4, op);
    if (k < 1 || stride < 1) throw ConfigError(std::string(op) + ": window and stride must be >= 1");
    PoolGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, stride, 0, 0};
    g.oh = conv_out_dim(g.h, k, stride, 0);
    g.ow = conv_out_dim(g.w, k, stride, 0);
    if (g.oh == 0 || g.ow == 0) {
        throw DimensionError(std::string(op) + ": window " + std::to_string(k) +
                             " larger than input " + shape_str(x.shape()));
    }
    return g;
}

}  // namespace detail

/// Max pooling without padding. Backward routes each output gradient to the
/// first maximal input in row-major window order.
inline Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
    const auto g = detail::pool_geometry(x, k, stride, "maxpool2d");
    const std::size_t outs = g.n * g.c * g.oh * g.ow;
    std::vector<double> out(outs);
    std::vector<std::size_t> argmax(outs);
    const auto xv = x.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
        const std::size_t base = plane * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox, ++o) {
                std::size_t best = base + (oy * g.stride) * g.w + ox * g.stride;
                for (std::size_t i = 0; i < g.k; ++i)
                    for (std::size_t j = 0; j < g.k; ++j) {
                        const std::size_t idx = base + (oy * g.stride + i) * g.w + ox * g.stride + j;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                argmax[o] = best;
                out[o] = xv[best];
            }
        }
    }
    return detail::make_result(Shape{g.n, g.c, g.oh, g.ow}, std::move(out), {x},
                               [argmax = std::move(argmax)](detail::Node& self) {
                                   auto gx = detail::parent_grad(self, 0);
                                   for (std::size_t i = 0; i < argmax.size(); ++i)
                                       gx[argmax[i]] += self.grad[i];
                               });
}

inline Tensor avgpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
    const auto g = detail::pool_geometry(x, k, stride, "avgpool2d");
    const double inv = 1.0 / static_cast<double>(k * k);
    std::vector<double> out(g.n * g.c * g.oh * g.ow);
    const auto xv = x.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
        const std::size_t base = plane * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox, ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < g.k; ++i)
                    for (std::size_t j = 0; j < g.k; ++j)
                        s += xv[base + (oy * g.stride + i) * g.w + ox * g.stride + j];
                out[o] = s * inv;
            }
    }
    return detail::make_result(Shape{g.n, g.c, g.oh, g.ow}, std::move(out), {x},
                               [g, inv](detail::Node& self) {
                                   auto gx = detail::parent_grad(self, 0);
                                   std::size_t o = 0;
                                   for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
                                       const std::size_t base = plane * g.h * g.w;
                                       for (std::size_t oy = 0; oy < g.oh; ++oy)
                                           for (std::size_t ox = 0; ox < g.ow; ++ox, ++o) {
                                               const double d = self.grad[o] * inv;
                                               for (std::size_t i = 0; i < g.k; ++i)
                                                   for (std::size_t j = 0; j < g.k; ++j)
                                                       gx[base + (oy * g.stride + i) * g.w + ox * g.stride + j] += d;
                                           }
                                   }
                               });
}

/// Mean over the spatial plane: N x C x H x W -> N x C.
inline Tensor global_avgpool(const Tensor& x) {
    detail::require_rank(x, 4, "global_avgpool");
    const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(area);
    std::vector<double> out(planes);
    const auto xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < area; ++i) s += xv[p * area + i];
        out[p] = s * inv;
    }
    return detail::make_result(Shape{x.dim(0), x.dim(1)}, std::move(out), {x},
                               [planes, area, inv](detail::Node& self) {
                                   auto gx = detail::parent_grad(self, 0);
                                   for (std::size_t p = 0; p < planes; ++p) {
                                       const double d = self.grad[p] * inv;
                                       for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += d;
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Per-channel running statistics owned by a batch-norm layer.
struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct BatchNormOptions {
    /// true: normalize with batch statistics; false: with running statistics.
    bool use_batch_stats = true;
    /// Fold batch statistics into the running estimates (batch mode only).
    bool update_running = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Batch normalization over N, H, W of an NCHW tensor with affine gamma/beta.
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          RunningStats& stats, const BatchNormOptions& opt) {
    detail::require_rank(x, 4, "batchnorm2d");
    const std::size_t n = x.dim(0), c = x.dim(1), area = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || stats.mean.size() != c || stats.var.size() != c) {
        throw DimensionError("batchnorm2d: input " + shape_str(x.shape()) +
                             " vs affine parameters " + shape_str(gamma.shape()));
    }
    const std::size_t count = n * area;
    const auto xv = x.data();
    std::vector<double> mean(c), inv_std(c);
    if (opt.use_batch_stats) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t s_i = 0; s_i < n; ++s_i)
                for (std::size_t i = 0; i < area; ++i) s += xv[(s_i * c + ch) * area + i];
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t s_i = 0; s_i < n; ++s_i)
                for (std::size_t i = 0; i < area; ++i) {
                    const double d = xv[(s_i * c + ch) * area + i] - mu;
                    ss += d * d;
                }
            const double var = ss / static_cast<double>(count);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + opt.eps);
            if (opt.update_running) {
                const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
                stats.mean[ch] = (1.0 - opt.momentum) * stats.mean[ch] + opt.momentum * mu;
                stats.var[ch] = (1.0 - opt.momentum) * stats.var[ch] + opt.momentum * unbiased;
            }
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = stats.mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + opt.eps);
        }
    }

    std::vector<double> xhat(x.numel()), out(x.numel());
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t s_i = 0; s_i < n; ++s_i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < area; ++i) {
                const std::size_t idx = (s_i * c + ch) * area + i;
                xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
                out[idx] = gv[ch] * xhat[idx] + bv[ch];
            }

    const bool batch_mode = opt.use_batch_stats;
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, c, area, count, batch_mode, inv_std = std::move(inv_std),
         xhat = std::move(xhat)](detail::Node& self) {
            const auto& dy = self.grad;
            const auto& gv = self.parents[1]->data;
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (std::size_t s_i = 0; s_i < n; ++s_i)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t idx = (s_i * c + ch) * area + i;
                        sum_dy[ch] += dy[idx];
                        sum_dy_xhat[ch] += dy[idx] * xhat[idx];
                    }
            if (auto gg = detail::parent_grad(self, 1); !gg.empty())
                for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
            if (auto gb = detail::parent_grad(self, 2); !gb.empty())
                for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
            auto gx = detail::parent_grad(self, 0);
            if (gx.empty()) return;
            const double m = static_cast<double>(count);
            for (std::size_t s_i = 0; s_i < n; ++s_i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double k = gv[ch] * inv_std[ch];
                    for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t idx = (s_i * c + ch) * area + i;
                        if (batch_mode) {
                            gx[idx] += k * (dy[idx] - sum_dy[ch] / m - xhat[idx] * sum_dy_xhat[ch] / m);
                        } else {
                            gx[idx] += k * dy[idx];
                        }
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// Classification loss

/// Row-wise softmax with max subtraction. Not differentiable (utility).
inline std::vector<double> softmax_rows(const Tensor& scores) {
    detail::require_rank(scores, 2, "softmax");
    const std::size_t n = scores.dim(0), k = scores.dim(1);
    const auto s = scores.data();
    std::vector<double> p(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = *std::max_element(s.begin() + static_cast<std::ptrdiff_t>(i * k),
                                            s.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += (p[i * k + j] = std::exp(s[i * k + j] - mx));
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
    }
    return p;
}

namespace detail {

inline void check_labels(std::span<const std::size_t> labels, std::size_t n, std::size_t k) {
    if (labels.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " score rows");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) {
            throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                            " of sample " + std::to_string(i) + " outside [0, " +
                            std::to_string(k) + ")");
        }
    }
}

}  // namespace detail

/// Per-sample -log softmax(scores)[label], using log-sum-exp with max subtraction.
inline std::vector<double> per_sample_cross_entropy(const Tensor& scores,
                                                    std::span<const std::size_t> labels) {
    detail::require_rank(scores, 2, "softmax_cross_entropy");
    const std::size_t n = scores.dim(0), k = scores.dim(1);
    detail::check_labels(labels, n, k);
    const auto s = scores.data();
    std::vector<double> losses(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = s.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        losses[i] = std::log(z) - (row[labels[i]] - mx);
    }
    return losses;
}

/// Mean multinomial logistic loss over the batch.
inline Tensor softmax_cross_entropy(const Tensor& scores, std::span<const std::size_t> labels) {
    detail::require_rank(scores, 2, "softmax_cross_entropy");
    const std::size_t n = scores.dim(0), k = scores.dim(1);
    if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
    const auto losses = per_sample_cross_entropy(scores, labels);
    double total = 0.0;
    for (double l : losses) total += l;
    const double loss = total / static_cast<double>(n);
    std::vector<std::size_t> y(labels.begin(), labels.end());
    return detail::make_result(Shape{1}, {loss}, {scores}, [n, k, y = std::move(y)](detail::Node& self) {
        auto gs = detail::parent_grad(self, 0);
        const auto& s = self.parents[0]->data;
        const double up = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = s.data() + i * k;
            const double mx = *std::max_element(row, row + k);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - mx) / z;
                gs[i * k + j] += up * (p - (j == y[i] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace xferlab
