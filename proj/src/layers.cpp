#include "availnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "availnet/error.hpp"

namespace availnet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Tensor uniform_init(Shape shape, double limit, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& v : t.values()) v = u(rng);
    return t;
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                            const char* what) {
    if (in + 2 * padding < kernel)
        throw ShapeError(std::string(what) + ": input extent " + std::to_string(in) + " (padding " +
                         std::to_string(padding) + ") smaller than window " + std::to_string(kernel));
    return (in + 2 * padding - kernel) / stride + 1;
}

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
    std::size_t patch() const { return channels * kh * kw; }
    std::size_t pixels() const { return out_h * out_w; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t pixels = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.padding);
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.padding);
                        const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.height) &&
                                            iw < static_cast<long>(g.width);
                        row[oh * g.out_w + ow] =
                            inside ? x[(c * g.height + static_cast<std::size_t>(ih)) * g.width +
                                       static_cast<std::size_t>(iw)]
                                   : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
    const std::size_t pixels = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.padding);
                    if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.padding);
                        if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
                        dx[(c * g.height + static_cast<std::size_t>(ih)) * g.width + static_cast<std::size_t>(iw)] +=
                            row[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be [batch, ch, H, W], got " + to_string(x.shape()));
    if (w.rank() != 4) throw ShapeError("conv2d: weight must be [out, ch, n, m], got " + to_string(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                         " channels but weight " + to_string(w.shape()) + " expects " + std::to_string(w.dim(1)));
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, padding, 0, 0};
    g.out_h = conv_out_extent(g.height, g.kh, stride, padding, "conv2d");
    g.out_w = conv_out_extent(g.width, g.kw, stride, padding, "conv2d");
    return g;
}

Tensor conv_forward_impl(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                         std::size_t padding, std::vector<double>* cache) {
    const ConvGeometry g = conv_geometry(x, w, stride, padding);
    const std::size_t out_ch = w.dim(0);
    require_shape(b, {out_ch}, "conv2d bias");
    const std::size_t batch = x.dim(0);
    Tensor y({batch, out_ch, g.out_h, g.out_w});
    std::vector<double> local;
    std::vector<double>& cols = cache ? *cache : local;
    const std::size_t per_sample = g.patch() * g.pixels();
    cols.assign(cache ? batch * per_sample : per_sample, 0.0);
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t n = 0; n < batch; ++n) {
        double* c = cols.data() + (cache ? n * per_sample : 0);
        im2col(x.data() + n * in_stride, g, c);
        double* yn = y.data() + n * out_ch * g.pixels();
        for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t p = 0; p < g.pixels(); ++p) yn[o * g.pixels() + p] = b[o];
        gemm_nn(out_ch, g.pixels(), g.patch(), w.data(), c, yn);
    }
    return y;
}

struct ChannelLayout {
    std::size_t outer, channels, inner;
    std::size_t count() const { return outer * inner; }
    std::size_t index(std::size_t n, std::size_t c, std::size_t s) const { return (n * channels + c) * inner + s; }
};

ChannelLayout channel_layout(const Tensor& x, const char* what) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw ShapeError(std::string(what) + ": expected rank 2 or 4 input, got " + to_string(x.shape()));
}

Tensor bn_forward(const Tensor& x, const Tensor& alpha, const Tensor& beta, double eps, Mode mode,
                  RunningStats& running, double momentum, Tensor* x_hat, std::vector<double>* inv_std_out) {
    const ChannelLayout L = channel_layout(x, "batch_norm");
    if (L.outer == 0) throw ValidationError("batch_norm: empty batch");
    if (!(eps >= 0.0)) throw ValidationError("batch_norm: eps must be non-negative");
    require_shape(alpha, {L.channels}, "batch_norm alpha");
    require_shape(beta, {L.channels}, "batch_norm beta");
    if (running.mean.shape() != Shape{L.channels}) running.mean = Tensor({L.channels}, 0.0);
    if (running.var.shape() != Shape{L.channels}) running.var = Tensor({L.channels}, 1.0);

    Tensor y(x.shape());
    if (x_hat) *x_hat = Tensor(x.shape());
    std::vector<double> inv_std(L.channels);
    const double m = static_cast<double>(L.count());
    for (std::size_t c = 0; c < L.channels; ++c) {
        double mean = 0.0, var = 0.0;
        if (mode == Mode::train) {
            for (std::size_t n = 0; n < L.outer; ++n)
                for (std::size_t s = 0; s < L.inner; ++s) mean += x[L.index(n, c, s)];
            mean /= m;
            for (std::size_t n = 0; n < L.outer; ++n)
                for (std::size_t s = 0; s < L.inner; ++s) {
                    const double d = x[L.index(n, c, s)] - mean;
                    var += d * d;
                }
            var /= m;
            running.mean[c] = momentum * running.mean[c] + (1.0 - momentum) * mean;
            running.var[c] = momentum * running.var[c] + (1.0 - momentum) * var;
        } else {
            mean = running.mean[c];
            var = running.var[c];
        }
        const double denom = var + eps;
        inv_std[c] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
        for (std::size_t n = 0; n < L.outer; ++n) {
            for (std::size_t s = 0; s < L.inner; ++s) {
                const std::size_t i = L.index(n, c, s);
                const double xh = (x[i] - mean) * inv_std[c];
                if (x_hat) (*x_hat)[i] = xh;
                y[i] = alpha[c] * xh + beta[c];
            }
        }
    }
    if (inv_std_out) *inv_std_out = std::move(inv_std);
    return y;
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": gradient shape " + to_string(a.shape()) + " does not match " +
                         to_string(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------

LayerKind kind_of(const LayerSpec& spec) {
    return std::visit(overloaded{
                          [](const DenseSpec&) { return LayerKind::dense; },
                          [](const LeakyReluSpec&) { return LayerKind::leaky_relu; },
                          [](const BatchNormSpec&) { return LayerKind::batch_norm; },
                          [](const Conv2dSpec&) { return LayerKind::conv2d; },
                          [](const PoolSpec& p) { return p.kind == PoolKind::max ? LayerKind::max_pool : LayerKind::avg_pool; },
                          [](const ResidualBlockSpec&) { return LayerKind::residual_block; },
                          [](const SoftmaxSpec&) { return LayerKind::softmax; },
                          [](const FlattenSpec&) { return LayerKind::flatten; },
                      },
                      spec);
}

const char* kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::max_pool: return "max_pool";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::residual_block: return "residual_block";
        case LayerKind::softmax: return "softmax";
        case LayerKind::flatten: return "flatten";
        case LayerKind::concat: return "concat";
    }
    return "unknown";
}

void validate(const LayerSpec& spec) {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw ValidationError(std::string(what) + " must be positive");
    };
    std::visit(overloaded{
                   [&](const DenseSpec& s) {
                       positive(s.in, "dense input width");
                       positive(s.out, "dense output width");
                   },
                   [](const LeakyReluSpec& s) {
                       if (!(s.leak >= 0.0 && s.leak < 1.0)) throw ValidationError("leaky relu slope must lie in [0, 1)");
                   },
                   [&](const BatchNormSpec& s) {
                       positive(s.features, "batch norm features");
                       if (!(s.eps > 0.0)) throw ValidationError("batch norm eps must be positive");
                       if (!(s.momentum >= 0.0 && s.momentum <= 1.0))
                           throw ValidationError("batch norm momentum must lie in [0, 1]");
                   },
                   [&](const Conv2dSpec& s) {
                       positive(s.in_channels, "conv input channels");
                       positive(s.out_channels, "conv output channels");
                       positive(s.kernel_h, "conv kernel height");
                       positive(s.kernel_w, "conv kernel width");
                       positive(s.stride, "conv stride");
                   },
                   [&](const PoolSpec& s) {
                       if (!s.global) {
                           positive(s.window, "pool window");
                           positive(s.stride, "pool stride");
                       }
                   },
                   [&](const ResidualBlockSpec& s) {
                       positive(s.in_channels, "residual input channels");
                       positive(s.out_channels, "residual output channels");
                       positive(s.stride, "residual stride");
                       if (s.batch_norm && !(s.eps > 0.0)) throw ValidationError("batch norm eps must be positive");
                   },
                   [](const SoftmaxSpec&) {},
                   [](const FlattenSpec&) {},
               },
               spec);
}

// ---------------------------------------------------------------------------

Tensor leaky_relu(const Tensor& x, double leak) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : leak * x[i];
    return y;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError("dense: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
    require_shape(b, {w.dim(1)}, "dense bias");
    const std::size_t batch = x.dim(0), out = w.dim(1);
    Tensor y({batch, out});
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < out; ++o) y.at(n, o) = b[o];
    gemm_nn(batch, out, x.dim(1), x.data(), w.data(), y.data());
    return y;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding) {
    return conv_forward_impl(x, w, b, stride, padding, nullptr);
}

Tensor pool(const Tensor& x, std::size_t window, std::size_t stride, PoolKind kind, std::size_t padding) {
    PoolLayer layer(PoolSpec{kind, window, stride, padding, false});
    return layer.forward(x, Mode::infer);
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(1) == 0)
        throw ShapeError("softmax: expected [batch, classes], got " + to_string(logits.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t n = 0; n < batch; ++n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits.at(n, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            p.at(n, c) = std::exp(logits.at(n, c) - mx);
            sum += p.at(n, c);
        }
        for (std::size_t c = 0; c < classes; ++c) p.at(n, c) /= sum;
    }
    return p;
}

Tensor batch_norm(const Tensor& x, const Tensor& alpha, const Tensor& beta, double eps, Mode mode,
                  RunningStats& running, double momentum) {
    return bn_forward(x, alpha, beta, eps, mode, running, momentum, nullptr, nullptr);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng) {
    validate(spec);
    return std::visit(overloaded{
                          [&](const DenseSpec& s) -> std::unique_ptr<Layer> { return std::make_unique<DenseLayer>(s, rng); },
                          [](const LeakyReluSpec& s) -> std::unique_ptr<Layer> {
                              return std::make_unique<ActivationLayer>(s.leak);
                          },
                          [](const BatchNormSpec& s) -> std::unique_ptr<Layer> { return std::make_unique<BatchNormLayer>(s); },
                          [&](const Conv2dSpec& s) -> std::unique_ptr<Layer> { return std::make_unique<Conv2dLayer>(s, rng); },
                          [](const PoolSpec& s) -> std::unique_ptr<Layer> { return std::make_unique<PoolLayer>(s); },
                          [&](const ResidualBlockSpec& s) -> std::unique_ptr<Layer> {
                              return std::make_unique<ResidualBlock>(s, rng);
                          },
                          [](const SoftmaxSpec&) -> std::unique_ptr<Layer> { return std::make_unique<SoftmaxLayer>(); },
                          [](const FlattenSpec&) -> std::unique_ptr<Layer> { return std::make_unique<FlattenLayer>(); },
                      },
                      spec);
}

// Dense ----------------------------------------------------------------------

DenseLayer::DenseLayer(const DenseSpec& spec, Rng& rng)
    : spec_(spec),
      weight_(uniform_init({spec.in, spec.out}, std::sqrt(6.0 / static_cast<double>(spec.in + spec.out)), rng)),
      bias_(Tensor({spec.out}, 0.0)) {}

Tensor DenseLayer::forward(const Tensor& x, Mode) {
    input_ = x;
    return dense_forward(x, weight_.value, bias_.value);
}

Tensor DenseLayer::infer(const Tensor& x) const { return dense_forward(x, weight_.value, bias_.value); }

Tensor DenseLayer::backward(const Tensor& grad_out) {
    const std::size_t batch = input_.dim(0);
    require_shape(grad_out, {batch, spec_.out}, "dense backward");
    gemm_tn(spec_.in, spec_.out, batch, input_.data(), grad_out.data(), weight_.grad.data());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < spec_.out; ++o) bias_.grad[o] += grad_out.at(n, o);
    Tensor dx({batch, spec_.in});
    gemm_nt(batch, spec_.in, spec_.out, grad_out.data(), weight_.value.data(), dx.data());
    return dx;
}

void DenseLayer::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
    fn(prefix + "weight", weight_);
    fn(prefix + "bias", bias_);
}

// Activation -----------------------------------------------------------------

Tensor ActivationLayer::forward(const Tensor& x, Mode) {
    input_ = x;
    return leaky_relu(x, leak_);
}

Tensor ActivationLayer::infer(const Tensor& x) const { return leaky_relu(x, leak_); }

Tensor ActivationLayer::backward(const Tensor& grad_out) {
    require_same(grad_out, input_, "activation backward");
    Tensor dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = input_[i] > 0.0 ? grad_out[i] : leak_ * grad_out[i];
    return dx;
}

// Batch norm -----------------------------------------------------------------

BatchNormLayer::BatchNormLayer(const BatchNormSpec& spec)
    : spec_(spec),
      alpha_(Tensor({spec.features}, 1.0)),
      beta_(Tensor({spec.features}, 0.0)),
      running_{Tensor({spec.features}, 0.0), Tensor({spec.features}, 1.0)} {}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
    mode_ = mode;
    in_shape_ = x.shape();
    return bn_forward(x, alpha_.value, beta_.value, spec_.eps, mode, running_, spec_.momentum, &x_hat_, &inv_std_);
}

Tensor BatchNormLayer::infer(const Tensor& x) const {
    RunningStats running = running_;
    return bn_forward(x, alpha_.value, beta_.value, spec_.eps, Mode::infer, running, spec_.momentum, nullptr, nullptr);
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
    require_shape(grad_out, in_shape_, "batch_norm backward");
    const ChannelLayout L = channel_layout(grad_out, "batch_norm backward");
    const double m = static_cast<double>(L.count());
    Tensor dx(grad_out.shape());
    for (std::size_t c = 0; c < L.channels; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < L.outer; ++n)
            for (std::size_t s = 0; s < L.inner; ++s) {
                const std::size_t i = L.index(n, c, s);
                sum_dy += grad_out[i];
                sum_dy_xh += grad_out[i] * x_hat_[i];
            }
        alpha_.grad[c] += sum_dy_xh;
        beta_.grad[c] += sum_dy;
        const double scale = alpha_.value[c] * inv_std_[c];
        for (std::size_t n = 0; n < L.outer; ++n)
            for (std::size_t s = 0; s < L.inner; ++s) {
                const std::size_t i = L.index(n, c, s);
                if (mode_ == Mode::train)
                    dx[i] = scale * (grad_out[i] - sum_dy / m - x_hat_[i] * sum_dy_xh / m);
                else
                    dx[i] = scale * grad_out[i];
            }
    }
    return dx;
}

void BatchNormLayer::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
    fn(prefix + "alpha", alpha_);
    fn(prefix + "beta", beta_);
}

void BatchNormLayer::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
    fn(prefix + "running_mean", running_.mean);
    fn(prefix + "running_var", running_.var);
}

// Conv -----------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const Conv2dSpec& spec, Rng& rng)
    : spec_(spec),
      weight_(uniform_init({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
                           std::sqrt(6.0 / static_cast<double>((spec.in_channels + spec.out_channels) *
                                                               spec.kernel_h * spec.kernel_w)),
                           rng)),
      bias_(Tensor({spec.out_channels}, 0.0)) {}

Tensor Conv2dLayer::forward(const Tensor& x, Mode) {
    in_shape_ = x.shape();
    Tensor y = conv_forward_impl(x, weight_.value, bias_.value, spec_.stride, spec_.padding, &cols_);
    out_h_ = y.dim(2);
    out_w_ = y.dim(3);
    return y;
}

Tensor Conv2dLayer::infer(const Tensor& x) const {
    return conv2d_forward(x, weight_.value, bias_.value, spec_.stride, spec_.padding);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out) {
    const std::size_t batch = in_shape_[0];
    require_shape(grad_out, {batch, spec_.out_channels, out_h_, out_w_}, "conv2d backward");
    const ConvGeometry g{in_shape_[1], in_shape_[2], in_shape_[3], spec_.kernel_h, spec_.kernel_w,
                         spec_.stride, spec_.padding, out_h_, out_w_};
    const std::size_t per_sample = g.patch() * g.pixels();
    const std::size_t in_stride = g.channels * g.height * g.width;
    Tensor dx(in_shape_);
    std::vector<double> dcols(per_sample);
    for (std::size_t n = 0; n < batch; ++n) {
        const double* dy = grad_out.data() + n * spec_.out_channels * g.pixels();
        const double* cols = cols_.data() + n * per_sample;
        gemm_nt(spec_.out_channels, g.patch(), g.pixels(), dy, cols, weight_.grad.data());
        for (std::size_t o = 0; o < spec_.out_channels; ++o)
            if (spec_.bias)
                for (std::size_t p = 0; p < g.pixels(); ++p) bias_.grad[o] += dy[o * g.pixels() + p];
        std::fill(dcols.begin(), dcols.end(), 0.0);
        gemm_tn(g.patch(), g.pixels(), spec_.out_channels, weight_.value.data(), dy, dcols.data());
        col2im(dcols.data(), g, dx.data() + n * in_stride);
    }
    return dx;
}

void Conv2dLayer::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
    fn(prefix + "weight", weight_);
    if (spec_.bias) fn(prefix + "bias", bias_);
}

// Pooling --------------------------------------------------------------------

Tensor PoolLayer::forward(const Tensor& x, Mode) {
    in_shape_ = x.shape();
    return run(x, &argmax_);
}

Tensor PoolLayer::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor PoolLayer::run(const Tensor& x, std::vector<std::size_t>* argmax) const {
    if (x.rank() != 4) throw ShapeError("pool: expected [batch, ch, H, W], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);

    if (spec_.global) {
        if (spec_.kind != PoolKind::avg) throw ValidationError("global pooling is average-only");
        Tensor y({batch, ch});
        const double area = static_cast<double>(h * w);
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < ch; ++c) {
                double s = 0.0;
                const double* src = x.data() + (n * ch + c) * h * w;
                for (std::size_t i = 0; i < h * w; ++i) s += src[i];
                y.at(n, c) = s / area;
            }
        return y;
    }

    const std::size_t oh = conv_out_extent(h, spec_.window, spec_.stride, spec_.padding, "pool");
    const std::size_t ow = conv_out_extent(w, spec_.window, spec_.stride, spec_.padding, "pool");
    Tensor y({batch, ch, oh, ow});
    if (argmax && spec_.kind == PoolKind::max) argmax->assign(y.size(), 0);
    const double area = static_cast<double>(spec_.window * spec_.window);
    std::size_t out_i = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (n * ch + c) * h * w;
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t q = 0; q < ow; ++q, ++out_i) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = base;
                    double sum = 0.0;
                    for (std::size_t i = 0; i < spec_.window; ++i) {
                        const long ih = static_cast<long>(r * spec_.stride + i) - static_cast<long>(spec_.padding);
                        if (ih < 0 || ih >= static_cast<long>(h)) continue;
                        for (std::size_t j = 0; j < spec_.window; ++j) {
                            const long iw = static_cast<long>(q * spec_.stride + j) - static_cast<long>(spec_.padding);
                            if (iw < 0 || iw >= static_cast<long>(w)) continue;
                            const std::size_t idx =
                                base + static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
                            sum += x[idx];
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    if (spec_.kind == PoolKind::max) {
                        y[out_i] = best;
                        if (argmax) (*argmax)[out_i] = best_idx;
                    } else {
                        y[out_i] = sum / area;
                    }
                }
            }
        }
    }
    return y;
}

Tensor PoolLayer::backward(const Tensor& grad_out) {
    Tensor dx(in_shape_);
    const std::size_t batch = in_shape_[0], ch = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    if (spec_.global) {
        require_shape(grad_out, {batch, ch}, "global pool backward");
        const double area = static_cast<double>(h * w);
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < ch; ++c) {
                double* dst = dx.data() + (n * ch + c) * h * w;
                const double g = grad_out.at(n, c) / area;
                for (std::size_t i = 0; i < h * w; ++i) dst[i] = g;
            }
        return dx;
    }
    if (grad_out.rank() != 4 || grad_out.dim(0) != batch || grad_out.dim(1) != ch)
        throw ShapeError("pool backward: unexpected gradient shape " + to_string(grad_out.shape()));
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
    if (spec_.kind == PoolKind::max) {
        for (std::size_t i = 0; i < grad_out.size(); ++i) dx[argmax_[i]] += grad_out[i];
        return dx;
    }
    const double area = static_cast<double>(spec_.window * spec_.window);
    std::size_t out_i = 0;
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (n * ch + c) * h * w;
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t q = 0; q < ow; ++q, ++out_i) {
                    const double g = grad_out[out_i] / area;
                    for (std::size_t i = 0; i < spec_.window; ++i) {
                        const long ih = static_cast<long>(r * spec_.stride + i) - static_cast<long>(spec_.padding);
                        if (ih < 0 || ih >= static_cast<long>(h)) continue;
                        for (std::size_t j = 0; j < spec_.window; ++j) {
                            const long iw = static_cast<long>(q * spec_.stride + j) - static_cast<long>(spec_.padding);
                            if (iw < 0 || iw >= static_cast<long>(w)) continue;
                            dx[base + static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)] += g;
                        }
                    }
                }
        }
    return dx;
}

// Softmax / flatten ----------------------------------------------------------

Tensor SoftmaxLayer::forward(const Tensor& x, Mode) {
    probs_ = softmax(x);
    return probs_;
}

Tensor SoftmaxLayer::infer(const Tensor& x) const { return softmax(x); }

Tensor SoftmaxLayer::backward(const Tensor& grad_out) {
    require_same(grad_out, probs_, "softmax backward");
    const std::size_t batch = probs_.dim(0), classes = probs_.dim(1);
    Tensor dx(probs_.shape());
    for (std::size_t n = 0; n < batch; ++n) {
        double dot = 0.0;
        for (std::size_t c = 0; c < classes; ++c) dot += grad_out.at(n, c) * probs_.at(n, c);
        for (std::size_t c = 0; c < classes; ++c) dx.at(n, c) = probs_.at(n, c) * (grad_out.at(n, c) - dot);
    }
    return dx;
}

Tensor FlattenLayer::forward(const Tensor& x, Mode) {
    if (x.rank() < 1) throw ShapeError("flatten: scalar input");
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(1, x.dim(0))});
}

Tensor FlattenLayer::infer(const Tensor& x) const {
    if (x.rank() < 1) throw ShapeError("flatten: scalar input");
    return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(1, x.dim(0))});
}

Tensor FlattenLayer::backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

// Residual block -------------------------------------------------------------

ResidualBlock::ResidualBlock(const ResidualBlockSpec& spec, Rng& rng)
    : spec_(spec),
      conv1_(Conv2dSpec{spec.in_channels, spec.out_channels, 3, 3, spec.stride, 1, !spec.batch_norm}, rng),
      conv2_(Conv2dSpec{spec.out_channels, spec.out_channels, 3, 3, 1, 1, !spec.batch_norm}, rng) {
    const BatchNormSpec bn{spec.out_channels, spec.eps, spec.momentum};
    if (spec.batch_norm) {
        bn1_.emplace(bn);
        bn2_.emplace(bn);
    }
    if (spec.in_channels != spec.out_channels || spec.stride != 1) {
        proj_conv_ = std::make_unique<Conv2dLayer>(
            Conv2dSpec{spec.in_channels, spec.out_channels, 1, 1, spec.stride, 0, !spec.batch_norm}, rng);
        if (spec.batch_norm) proj_bn_.emplace(bn);
    }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
        throw ShapeError("residual block: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                         to_string(x.shape()));
    Tensor f = conv1_.forward(x, mode);
    if (bn1_) f = bn1_->forward(f, mode);
    f = relu1_.forward(f, mode);
    f = conv2_.forward(f, mode);
    if (bn2_) f = bn2_->forward(f, mode);

    Tensor skip = x;
    if (proj_conv_) {
        skip = proj_conv_->forward(x, mode);
        if (proj_bn_) skip = proj_bn_->forward(skip, mode);
    }
    if (skip.shape() != f.shape())
        throw ShapeError("residual block: skip shape " + to_string(skip.shape()) + " does not match residual " +
                         to_string(f.shape()));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += skip[i];
    return relu_out_.forward(f, mode);
}

Tensor ResidualBlock::infer(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
        throw ShapeError("residual block: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                         to_string(x.shape()));
    Tensor f = conv1_.infer(x);
    if (bn1_) f = bn1_->infer(f);
    f = relu1_.infer(f);
    f = conv2_.infer(f);
    if (bn2_) f = bn2_->infer(f);
    Tensor skip = x;
    if (proj_conv_) {
        skip = proj_conv_->infer(x);
        if (proj_bn_) skip = proj_bn_->infer(skip);
    }
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += skip[i];
    return relu_out_.infer(f);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
    const Tensor g_sum = relu_out_.backward(grad_out);

    Tensor g = g_sum;
    if (bn2_) g = bn2_->backward(g);
    g = conv2_.backward(g);
    g = relu1_.backward(g);
    if (bn1_) g = bn1_->backward(g);
    Tensor dx = conv1_.backward(g);

    if (proj_conv_) {
        Tensor gs = g_sum;
        if (proj_bn_) gs = proj_bn_->backward(gs);
        gs = proj_conv_->backward(gs);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gs[i];
    } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g_sum[i];
    }
    return dx;
}

void ResidualBlock::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
    conv1_.visit_parameters(prefix + "conv1.", fn);
    if (bn1_) bn1_->visit_parameters(prefix + "bn1.", fn);
    conv2_.visit_parameters(prefix + "conv2.", fn);
    if (bn2_) bn2_->visit_parameters(prefix + "bn2.", fn);
    if (proj_conv_) proj_conv_->visit_parameters(prefix + "proj.", fn);
    if (proj_bn_) proj_bn_->visit_parameters(prefix + "proj_bn.", fn);
}

void ResidualBlock::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
    if (bn1_) bn1_->visit_buffers(prefix + "bn1.", fn);
    if (bn2_) bn2_->visit_buffers(prefix + "bn2.", fn);
    if (proj_bn_) proj_bn_->visit_buffers(prefix + "proj_bn.", fn);
}

}  // namespace availnet
