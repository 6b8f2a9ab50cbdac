#include "availnet/network.hpp"

#include "availnet/error.hpp"
#include "availnet/random.hpp"

namespace availnet {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

nlohmann::json to_json(const LayerSpec& spec) {
    nlohmann::json j;
    j["kind"] = kind_name(kind_of(spec));
    std::visit(overloaded{
                   [&](const DenseSpec& s) {
                       j["in"] = s.in;
                       j["out"] = s.out;
                   },
                   [&](const LeakyReluSpec& s) { j["leak"] = s.leak; },
                   [&](const BatchNormSpec& s) {
                       j["features"] = s.features;
                       j["eps"] = s.eps;
                       j["momentum"] = s.momentum;
                   },
                   [&](const Conv2dSpec& s) {
                       j["in_channels"] = s.in_channels;
                       j["out_channels"] = s.out_channels;
                       j["kernel_h"] = s.kernel_h;
                       j["kernel_w"] = s.kernel_w;
                       j["stride"] = s.stride;
                       j["padding"] = s.padding;
                       j["bias"] = s.bias;
                   },
                   [&](const PoolSpec& s) {
                       j["window"] = s.window;
                       j["stride"] = s.stride;
                       j["padding"] = s.padding;
                       j["global"] = s.global;
                   },
                   [&](const ResidualBlockSpec& s) {
                       j["in_channels"] = s.in_channels;
                       j["out_channels"] = s.out_channels;
                       j["stride"] = s.stride;
                       j["batch_norm"] = s.batch_norm;
                       j["eps"] = s.eps;
                       j["momentum"] = s.momentum;
                   },
                   [](const SoftmaxSpec&) {},
                   [](const FlattenSpec&) {},
               },
               spec);
    return j;
}

LayerSpec layer_spec_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") return DenseSpec{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>()};
    if (kind == "leaky_relu") return LeakyReluSpec{j.at("leak").get<double>()};
    if (kind == "batch_norm")
        return BatchNormSpec{j.at("features").get<std::size_t>(), get_or(j, "eps", 1e-5), get_or(j, "momentum", 0.9)};
    if (kind == "conv2d")
        return Conv2dSpec{j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                          j.at("kernel_h").get<std::size_t>(),    j.at("kernel_w").get<std::size_t>(),
                          get_or<std::size_t>(j, "stride", 1),    get_or<std::size_t>(j, "padding", 0),
                          get_or(j, "bias", true)};
    if (kind == "max_pool" || kind == "avg_pool")
        return PoolSpec{kind == "max_pool" ? PoolKind::max : PoolKind::avg, get_or<std::size_t>(j, "window", 2),
                        get_or<std::size_t>(j, "stride", 2), get_or<std::size_t>(j, "padding", 0),
                        get_or(j, "global", false)};
    if (kind == "residual_block")
        return ResidualBlockSpec{j.at("in_channels").get<std::size_t>(), j.at("out_channels").get<std::size_t>(),
                                 get_or<std::size_t>(j, "stride", 1),    get_or(j, "batch_norm", true),
                                 get_or(j, "eps", 1e-5),                 get_or(j, "momentum", 0.9)};
    if (kind == "softmax") return SoftmaxSpec{};
    if (kind == "flatten") return FlattenSpec{};
    throw ValidationError("unknown layer kind '" + kind + "'");
}

nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : spec) arr.push_back(to_json(s));
    return arr;
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    for (const auto& item : j) spec.push_back(layer_spec_from_json(item));
    return spec;
}

Sequential::Sequential(const NetworkSpec& spec, std::uint64_t seed) {
    for (std::size_t i = 0; i < spec.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        layers_.push_back(make_layer(spec[i], rng));
    }
}

NetworkSpec Sequential::spec() const {
    NetworkSpec out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    if (checked_) h.require_finite("network input");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i]->forward(h, mode);
        if (checked_) h.require_finite("output of layer " + std::to_string(i));
    }
    return h;
}

Tensor Sequential::infer(const Tensor& x) const {
    Tensor h = x;
    if (checked_) h.require_finite("network input");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i]->infer(h);
        if (checked_) h.require_finite("output of layer " + std::to_string(i));
    }
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        g = layers_[i]->backward(g);
        if (checked_) g.require_finite("gradient of layer " + std::to_string(i));
    }
    return g;
}

void Sequential::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->visit_parameters(prefix + std::to_string(i) + ".", fn);
}

void Sequential::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit_buffers(prefix + std::to_string(i) + ".", fn);
}

std::vector<Parameter*> Sequential::parameters() {
    std::vector<Parameter*> out;
    visit_parameters("", [&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
}

void Sequential::zero_grad() {
    visit_parameters("", [](const std::string&, Parameter& p) { p.zero_grad(); });
}

std::map<std::string, Tensor> Sequential::state(const std::string& prefix) const {
    std::map<std::string, Tensor> out;
    // The visitors only read here.
    auto& self = const_cast<Sequential&>(*this);
    self.visit_parameters(prefix, [&](const std::string& name, Parameter& p) { out[name] = p.value; });
    self.visit_buffers(prefix, [&](const std::string& name, Tensor& t) { out[name] = t; });
    return out;
}

void Sequential::load_state(const std::map<std::string, Tensor>& state, const std::string& prefix) {
    auto take = [&](const std::string& name, Tensor& dst) {
        auto it = state.find(name);
        if (it == state.end()) throw ValidationError("missing tensor '" + name + "' in model state");
        require_shape(it->second, dst.shape(), name);
        dst = it->second;
    };
    visit_parameters(prefix, [&](const std::string& name, Parameter& p) { take(name, p.value); });
    visit_buffers(prefix, [&](const std::string& name, Tensor& t) { take(name, t); });
}

}  // namespace availnet
