#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "availnet/layers.hpp"

namespace availnet {

using NetworkSpec = std::vector<LayerSpec>;

nlohmann::json to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

/// Layers applied in order. Exclusively owned while training; forward in
/// inference mode does not touch any state other than layer caches.
class Sequential {
public:
    Sequential() = default;
    Sequential(const NetworkSpec& spec, std::uint64_t seed);

    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    NetworkSpec spec() const;

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
    /// Inference without touching any layer state; safe to call concurrently.
    Tensor infer(const Tensor& x) const;

    /// Rejects NaN/Inf after every layer when enabled.
    void set_checked(bool on) noexcept { checked_ = on; }

    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn);
    void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
    std::vector<Parameter*> parameters();
    void zero_grad();

    /// Parameters and running statistics by qualified name.
    std::map<std::string, Tensor> state(const std::string& prefix = "") const;
    void load_state(const std::map<std::string, Tensor>& state, const std::string& prefix = "");

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    bool checked_ = false;
};

}  // namespace availnet
