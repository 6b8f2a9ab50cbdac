#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "availnet/random.hpp"
#include "availnet/tensor.hpp"

namespace availnet {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Layer descriptions

struct DenseSpec {
    std::size_t in = 0;
    std::size_t out = 0;
};

struct LeakyReluSpec {
    double leak = 0.01;  // 0 gives plain ReLU
};

struct BatchNormSpec {
    std::size_t features = 0;  // features (rank 2) or channels (rank 4)
    double eps = 1e-5;
    double momentum = 0.9;
};

struct Conv2dSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool bias = true;
};

enum class PoolKind { max, avg };

struct PoolSpec {
    PoolKind kind = PoolKind::max;
    std::size_t window = 2;
    std::size_t stride = 2;
    std::size_t padding = 0;
    bool global = false;  // collapse H x W entirely, output [N, C]
};

struct ResidualBlockSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t stride = 1;
    bool batch_norm = true;
    double eps = 1e-5;
    double momentum = 0.9;
};

struct SoftmaxSpec {};
struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, LeakyReluSpec, BatchNormSpec, Conv2dSpec, PoolSpec, ResidualBlockSpec,
                               SoftmaxSpec, FlattenSpec>;

enum class LayerKind { dense, leaky_relu, batch_norm, conv2d, max_pool, avg_pool, residual_block, softmax, flatten, concat };

LayerKind kind_of(const LayerSpec& spec);
const char* kind_name(LayerKind kind);
void validate(const LayerSpec& spec);

// ---------------------------------------------------------------------------
// Stateless forward kernels

Tensor leaky_relu(const Tensor& x, double leak);
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding);
Tensor pool(const Tensor& x, std::size_t window, std::size_t stride, PoolKind kind, std::size_t padding = 0);
Tensor softmax(const Tensor& logits);

struct RunningStats {
    Tensor mean;
    Tensor var;
};

/// Per-feature (rank 2) or per-channel (rank 4) normalization with population
/// variance. Training mode folds the batch statistics into `running` with
/// `momentum`; inference mode reads `running` instead.
Tensor batch_norm(const Tensor& x, const Tensor& alpha, const Tensor& beta, double eps, Mode mode,
                  RunningStats& running, double momentum = 0.9);

// ---------------------------------------------------------------------------
// Layers with backward passes

struct Parameter {
    Tensor value;
    Tensor grad;

    explicit Parameter(Tensor v = {}) : value(std::move(v)), grad(value.shape()) {}
    void zero_grad() { grad.fill(0.0); }
};

using ParameterVisitor = std::function<void(const std::string& name, Parameter& p)>;
using BufferVisitor = std::function<void(const std::string& name, Tensor& t)>;

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerSpec spec() const = 0;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    /// Inference-mode forward that leaves the layer untouched.
    virtual Tensor infer(const Tensor& x) const = 0;
    /// Gradient w.r.t. the last forward input; parameter gradients accumulate.
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual void visit_parameters(const std::string& /*prefix*/, const ParameterVisitor& /*fn*/) {}
    virtual void visit_buffers(const std::string& /*prefix*/, const BufferVisitor& /*fn*/) {}
};

/// Builds a layer with scaled-uniform weights, zero biases, BN alpha = 1, beta = 0.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng);

class DenseLayer final : public Layer {
public:
    DenseLayer(const DenseSpec& spec, Rng& rng);
    LayerSpec spec() const override { return spec_; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    DenseSpec spec_;
    Parameter weight_;  // [in, out]
    Parameter bias_;    // [out]
    Tensor input_;
};

/// Leaky ReLU; a slope of 0 gives plain ReLU (used inside residual blocks).
class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(double leak) : leak_(leak) {}
    LayerSpec spec() const override { return LeakyReluSpec{leak_}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;

private:
    double leak_;
    Tensor input_;
};

class BatchNormLayer final : public Layer {
public:
    explicit BatchNormLayer(const BatchNormSpec& spec);
    LayerSpec spec() const override { return spec_; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;
    void visit_buffers(const std::string& prefix, const BufferVisitor& fn) override;

    Parameter& alpha() { return alpha_; }
    Parameter& beta() { return beta_; }
    RunningStats& running() { return running_; }

private:
    BatchNormSpec spec_;
    Parameter alpha_;
    Parameter beta_;
    RunningStats running_;
    // forward cache
    Mode mode_ = Mode::train;
    Shape in_shape_;
    Tensor x_hat_;
    std::vector<double> inv_std_;
};

class Conv2dLayer final : public Layer {
public:
    Conv2dLayer(const Conv2dSpec& spec, Rng& rng);
    LayerSpec spec() const override { return spec_; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    Conv2dSpec spec_;
    Parameter weight_;  // [out, in, kh, kw]
    Parameter bias_;    // [out]
    Shape in_shape_;
    std::size_t out_h_ = 0;
    std::size_t out_w_ = 0;
    std::vector<double> cols_;  // im2col of every sample in the last batch
};

class PoolLayer final : public Layer {
public:
    explicit PoolLayer(const PoolSpec& spec) : spec_(spec) {}
    LayerSpec spec() const override { return spec_; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor run(const Tensor& x, std::vector<std::size_t>* argmax) const;

    PoolSpec spec_;
    Shape in_shape_;
    std::vector<std::size_t> argmax_;  // max pooling: flat input index per output
};

class SoftmaxLayer final : public Layer {
public:
    LayerSpec spec() const override { return SoftmaxSpec{}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor probs_;
};

class FlattenLayer final : public Layer {
public:
    LayerSpec spec() const override { return FlattenSpec{}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Shape in_shape_;
};

/// out = ReLU(F(x) + skip(x)), F = conv3x3(stride) -> BN -> ReLU -> conv3x3 -> BN.
/// The skip is the identity, or a strided 1x1 convolution (+ BN) when the
/// channel count or stride changes.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(const ResidualBlockSpec& spec, Rng& rng);
    LayerSpec spec() const override { return spec_; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor infer(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;
    void visit_buffers(const std::string& prefix, const BufferVisitor& fn) override;

    bool has_projection() const noexcept { return static_cast<bool>(proj_conv_); }

private:
    ResidualBlockSpec spec_;
    Conv2dLayer conv1_;
    std::optional<BatchNormLayer> bn1_;
    ActivationLayer relu1_{0.0};
    Conv2dLayer conv2_;
    std::optional<BatchNormLayer> bn2_;
    std::unique_ptr<Conv2dLayer> proj_conv_;
    std::optional<BatchNormLayer> proj_bn_;
    ActivationLayer relu_out_{0.0};
};

}  // namespace availnet
