#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xferlab/ops.hpp"
#include "xferlab/rng.hpp"
#include "xferlab/tensor.hpp"

namespace xferlab {

enum class LayerKind { conv, batchnorm, dense, relu, pool, residual_block, flatten };

enum class Mode { train, eval };

/// Per-call forward settings. `frozen` marks layers of a non-trainable
/// group: batch norm then normalizes with, and never updates, its running
/// statistics.
struct ForwardContext {
    Mode mode = Mode::eval;
    bool frozen = false;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// A non-trainable state array (batch-norm running statistics).
struct NamedBuffer {
    std::string name;
    std::vector<double>* values;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;

    /// Appends trainable parameters and state buffers, names prefixed.
    virtual void collect(const std::string& /*prefix*/, std::vector<NamedTensor>& /*params*/,
                         std::vector<NamedBuffer>& /*buffers*/) {}

    const std::string& name() const noexcept { return name_; }

protected:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    Layer(const Layer&) = default;

private:
    std::string name_;
};

namespace detail {

inline Tensor deep_copy_param(const Tensor& t) {
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
}

}  // namespace detail

class Conv2d final : public Layer {
public:
    Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           Conv2dOptions opt)
        : Layer(std::move(name)),
          weight_(Shape{out_channels, in_channels, kernel, kernel}),
          opt_(opt) {
        weight_.set_requires_grad(true);
    }

    Conv2d(const Conv2d& o) : Layer(o), weight_(detail::deep_copy_param(o.weight_)), opt_(o.opt_) {}

    /// He-normal initialization: N(0, 2 / fan_in).
    void init_he(Rng& rng) {
        const double fan_in = static_cast<double>(weight_.dim(1) * weight_.dim(2) * weight_.dim(3));
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& w : weight_.data()) w = rng.normal(0.0, sd);
    }

    LayerKind kind() const override { return LayerKind::conv; }
    Tensor forward(const Tensor& x, const ForwardContext&) override { return conv2d(x, weight_, opt_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>&) override {
        params.push_back({prefix + name() + ".weight", weight_});
    }

    Tensor& weight() { return weight_; }
    const Conv2dOptions& options() const { return opt_; }

private:
    Tensor weight_;
    Conv2dOptions opt_;
};

class BatchNorm2d final : public Layer {
public:
    BatchNorm2d(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
        : Layer(std::move(name)),
          gamma_(Shape{channels}, 1.0),
          beta_(Shape{channels}, 0.0),
          stats_{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)},
          momentum_(momentum),
          eps_(eps) {
        gamma_.set_requires_grad(true);
        beta_.set_requires_grad(true);
    }

    BatchNorm2d(const BatchNorm2d& o)
        : Layer(o),
          gamma_(detail::deep_copy_param(o.gamma_)),
          beta_(detail::deep_copy_param(o.beta_)),
          stats_(o.stats_),
          momentum_(o.momentum_),
          eps_(o.eps_) {}

    LayerKind kind() const override { return LayerKind::batchnorm; }

    Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
        const bool batch = ctx.mode == Mode::train && !ctx.frozen;
        return batchnorm2d(x, gamma_, beta_, stats_,
                           BatchNormOptions{batch, batch, momentum_, eps_});
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) override {
        params.push_back({prefix + name() + ".gamma", gamma_});
        params.push_back({prefix + name() + ".beta", beta_});
        buffers.push_back({prefix + name() + ".running_mean", &stats_.mean});
        buffers.push_back({prefix + name() + ".running_var", &stats_.var});
    }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    const RunningStats& running() const { return stats_; }
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }

private:
    Tensor gamma_, beta_;
    RunningStats stats_;
    double momentum_, eps_;
};

/// y = x W + b with W stored in x out.
class Dense final : public Layer {
public:
    Dense(std::string name, std::size_t in, std::size_t out)
        : Layer(std::move(name)), weight_(Shape{in, out}), bias_(Shape{out}) {
        weight_.set_requires_grad(true);
        bias_.set_requires_grad(true);
    }

    Dense(const Dense& o)
        : Layer(o), weight_(detail::deep_copy_param(o.weight_)), bias_(detail::deep_copy_param(o.bias_)) {}

    /// Weights uniform in [-scale, scale], bias zero.
    void init_uniform(Rng& rng, double scale) {
        for (auto& w : weight_.data()) w = rng.uniform(-scale, scale);
        for (auto& b : bias_.data()) b = 0.0;
    }

    LayerKind kind() const override { return LayerKind::dense; }
    Tensor forward(const Tensor& x, const ForwardContext&) override {
        return add_bias(matmul(x, weight_), bias_);
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>&) override {
        params.push_back({prefix + name() + ".weight", weight_});
        params.push_back({prefix + name() + ".bias", bias_});
    }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    std::size_t in_features() const { return weight_.dim(0); }
    std::size_t out_features() const { return weight_.dim(1); }

private:
    Tensor weight_, bias_;
};

class Relu final : public Layer {
public:
    explicit Relu(std::string name) : Layer(std::move(name)) {}
    LayerKind kind() const override { return LayerKind::relu; }
    Tensor forward(const Tensor& x, const ForwardContext&) override { return relu(x); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

enum class PoolType { max, average, global_average };

class Pool2d final : public Layer {
public:
    Pool2d(std::string name, PoolType type, std::size_t window = 2, std::size_t stride = 2)
        : Layer(std::move(name)), type_(type), window_(window), stride_(stride) {}

    LayerKind kind() const override { return LayerKind::pool; }

    Tensor forward(const Tensor& x, const ForwardContext&) override {
        switch (type_) {
            case PoolType::max: return maxpool2d(x, window_, stride_);
            case PoolType::average: return avgpool2d(x, window_, stride_);
            case PoolType::global_average: return global_avgpool(x);
        }
        return x;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<Pool2d>(*this); }
    PoolType type() const { return type_; }

private:
    PoolType type_;
    std::size_t window_, stride_;
};

class Flatten final : public Layer {
public:
    explicit Flatten(std::string name) : Layer(std::move(name)) {}
    LayerKind kind() const override { return LayerKind::flatten; }
    Tensor forward(const Tensor& x, const ForwardContext&) override { return flatten(x); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
};

/// out = x + bn2(conv2(relu(bn1(conv1(x))))), 3x3 convs, same channel count.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(std::string name, std::size_t channels)
        : Layer(std::move(name)),
          conv1_("conv1", channels, channels, 3, {1, 1}),
          bn1_("bn1", channels),
          conv2_("conv2", channels, channels, 3, {1, 1}),
          bn2_("bn2", channels) {}

    LayerKind kind() const override { return LayerKind::residual_block; }

    Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
        Tensor h = relu(bn1_.forward(conv1_.forward(x, ctx), ctx));
        h = bn2_.forward(conv2_.forward(h, ctx), ctx);
        return add(x, h);
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedBuffer>& buffers) override {
        const std::string p = prefix + name() + ".";
        conv1_.collect(p, params, buffers);
        bn1_.collect(p, params, buffers);
        conv2_.collect(p, params, buffers);
        bn2_.collect(p, params, buffers);
    }

    void init_he(Rng& rng) {
        conv1_.init_he(rng);
        conv2_.init_he(rng);
    }

    Conv2d& conv1() { return conv1_; }
    Conv2d& conv2() { return conv2_; }
    BatchNorm2d& bn1() { return bn1_; }
    BatchNorm2d& bn2() { return bn2_; }

private:
    Conv2d conv1_;
    BatchNorm2d bn1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
};

}  // namespace xferlab
